//! Backend traits implemented over a protocol [`Connection`].

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{Connection, Endpoint, Method};
use crate::backends::{
    Crop, Detector, FrameRef, Judge, JudgeVerdict, Role, Segmenter, SegmenterInit, SemanticVerdict, SessionId,
    TrackOutput, Tracker,
};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Mask};

fn decode<T: DeserializeOwned>(method: Method, payload: Value) -> Result<T> {
    serde_json::from_value(payload).map_err(|e| Error::ProtocolViolation(format!("bad `{method}` payload: {e}")))
}

fn open(endpoint: &Endpoint, timeout: Duration, role: Role) -> Result<Connection> {
    let conn = Connection::connect(endpoint, timeout)?;
    conn.require(Method::for_role(role))?;
    Ok(conn)
}

pub struct RemoteSegmenter {
    conn: Connection,
    /// Video of each session, for the request's frame reference.
    videos: Vec<(SessionId, String)>,
}

impl RemoteSegmenter {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        Ok(Self::new(open(endpoint, timeout, Role::Segmenter)?))
    }

    pub fn new(conn: Connection) -> Self {
        Self {
            conn,
            videos: Vec::new(),
        }
    }

    fn frame(&self, session: &SessionId, t: usize) -> Option<FrameRef> {
        self.videos
            .iter()
            .find(|(s, _)| s == session)
            .map(|(_, v)| FrameRef::new(v.clone(), t))
    }
}

#[derive(Deserialize)]
struct SessionReply {
    session_id: SessionId,
}

#[derive(Deserialize)]
struct MaskReply {
    mask: Mask,
}

impl Segmenter for RemoteSegmenter {
    fn init(&mut self, init: &SegmenterInit) -> Result<SessionId> {
        let params = json!({
            "video_id": init.video_id,
            "object_id": init.object_id,
            "first_frame_index": init.first_frame_index,
            "first_mask": init.first_mask,
        });
        let frame = FrameRef::new(init.video_id.clone(), init.first_frame_index);
        let payload = self.conn.call(Method::InitSegmenter, params, Some(frame))?;
        let reply: SessionReply = decode(Method::InitSegmenter, payload)?;
        self.videos.push((reply.session_id.clone(), init.video_id.clone()));
        Ok(reply.session_id)
    }

    fn propagate(&mut self, session: &SessionId, frame_index: usize) -> Result<Mask> {
        let params = json!({ "session_id": session, "frame_index": frame_index });
        let frame = self.frame(session, frame_index);
        let payload = self.conn.call(Method::Propagate, params, frame)?;
        Ok(decode::<MaskReply>(Method::Propagate, payload)?.mask)
    }

    fn prompt_box(&mut self, session: &SessionId, frame_index: usize, bbox: BBox) -> Result<()> {
        let params = json!({ "session_id": session, "frame_index": frame_index, "bbox": bbox });
        let frame = self.frame(session, frame_index);
        self.conn.call(Method::PromptBox, params, frame)?;
        Ok(())
    }
}

pub struct RemoteTracker {
    conn: Connection,
    video_id: Option<String>,
}

impl RemoteTracker {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        Ok(Self::new(open(endpoint, timeout, Role::Tracker)?))
    }

    pub fn new(conn: Connection) -> Self {
        Self { conn, video_id: None }
    }
}

impl Tracker for RemoteTracker {
    fn init(&mut self, first_frame: &FrameRef, template: BBox) -> Result<()> {
        let params = json!({ "first_frame": first_frame, "template": template });
        self.conn.call(Method::InitTracker, params, Some(first_frame.clone()))?;
        self.video_id = Some(first_frame.video_id.clone());
        Ok(())
    }

    fn track(&mut self, frame_index: usize) -> Result<TrackOutput> {
        let video = self.video_id.clone().ok_or(Error::NotInitialized)?;
        let params = json!({ "frame_index": frame_index });
        let payload = self.conn.call(Method::Track, params, Some(FrameRef::new(video, frame_index)))?;
        decode(Method::Track, payload)
    }
}

pub struct RemoteDetector {
    conn: Connection,
    video_id: Option<String>,
}

impl RemoteDetector {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        Ok(Self::new(open(endpoint, timeout, Role::Detector)?))
    }

    pub fn new(conn: Connection) -> Self {
        Self { conn, video_id: None }
    }
}

#[derive(Deserialize)]
struct DescribeReply {
    description: String,
}

impl Detector for RemoteDetector {
    fn describe(&mut self, first_frame: &FrameRef, mask: &Mask) -> Result<String> {
        let params = json!({ "first_frame": first_frame, "mask": mask });
        let payload = self.conn.call(Method::Describe, params, Some(first_frame.clone()))?;
        self.video_id = Some(first_frame.video_id.clone());
        Ok(decode::<DescribeReply>(Method::Describe, payload)?.description)
    }

    fn detect(&mut self, frame_index: usize, description: &str) -> Result<TrackOutput> {
        let video = self.video_id.clone().ok_or(Error::NotInitialized)?;
        let params = json!({ "frame_index": frame_index, "description": description });
        let payload = self.conn.call(Method::Detect, params, Some(FrameRef::new(video, frame_index)))?;
        decode(Method::Detect, payload)
    }
}

pub struct RemoteJudge {
    conn: Connection,
}

impl RemoteJudge {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        Ok(Self::new(open(endpoint, timeout, Role::Judge)?))
    }

    pub fn new(conn: Connection) -> Self {
        Self { conn }
    }
}

impl Judge for RemoteJudge {
    fn classify_semantic(&mut self, frame: &FrameRef, mask: &Mask) -> Result<SemanticVerdict> {
        let params = json!({ "frame": frame, "mask": mask });
        let payload = self.conn.call(Method::ClassifySemantic, params, Some(frame.clone()))?;
        decode(Method::ClassifySemantic, payload)
    }

    fn compare(&mut self, reference: &Crop, baseline: &Crop, auxiliary: &Crop) -> Result<JudgeVerdict> {
        let params = json!({ "reference": reference, "baseline": baseline, "auxiliary": auxiliary });
        let payload = self.conn.call(Method::Judge, params, Some(baseline.frame.clone()))?;
        decode(Method::Judge, payload)
    }
}
