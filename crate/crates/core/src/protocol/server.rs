//! Server side of the protocol, with a handler that exposes the mock
//! backends. Useful for exercising remote code paths without model weights.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendResponse, Method, PROTOCOL_VERSION};
use crate::backends::mock::{MockDetector, MockJudge, MockProfile, MockSegmenter, MockTracker, VideoSource};
use crate::backends::{Crop, Detector, FrameRef, Judge, Role, Segmenter, SegmenterInit, SessionId, Tracker};
use crate::error::{Error, Result};
use crate::geometry::{BBox, Mask};

/// Answers the requests of one connection.
pub trait RequestHandler {
    /// Methods served besides `hello` and `shutdown`.
    fn capabilities(&self) -> Vec<Method>;
    fn handle(&mut self, method: Method, params: Value, frame: Option<FrameRef>) -> Result<Value>;
}

#[derive(Deserialize)]
struct RawRequest {
    id: u64,
    method: String,
    #[serde(default)]
    params: Value,
    #[serde(default)]
    frame: Option<FrameRef>,
}

fn write_response(writer: &mut dyn Write, response: &BackendResponse) -> Result<()> {
    let mut line = serde_json::to_string(response).expect("serializable");
    line.push('\n');
    writer
        .write_all(line.as_bytes())
        .and_then(|_| writer.flush())
        .map_err(|e| Error::io("writing response", e))
}

/// Serves requests until `shutdown` or end of input. Malformed lines get an
/// error response and the connection stays open.
pub fn serve(reader: impl BufRead, mut writer: impl Write, handler: &mut dyn RequestHandler) -> Result<()> {
    let mut last_id: Option<u64> = None;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("reading request", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRequest = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(Value::as_u64))
                    .unwrap_or(0);
                write_response(&mut writer, &BackendResponse::error(id, "ProtocolViolation", format!("malformed request: {e}")))?;
                continue;
            }
        };
        let id = raw.id;
        if last_id.is_some_and(|last| id <= last) {
            let msg = format!("request id {id} is not greater than {}", last_id.unwrap_or(0));
            write_response(&mut writer, &BackendResponse::error(id, "ProtocolViolation", msg))?;
            continue;
        }
        last_id = Some(id);
        let response = match raw.method.parse::<Method>() {
            Err(_) => BackendResponse::error(id, "UnknownMethod", format!("unknown method `{}`", raw.method)),
            Ok(Method::Hello) => hello(id, &raw.params, handler),
            Ok(Method::Shutdown) => {
                write_response(&mut writer, &BackendResponse::ok(id, json!({})))?;
                return Ok(());
            }
            Ok(m) if !handler.capabilities().contains(&m) => {
                BackendResponse::error(id, "UnknownMethod", format!("method `{m}` is not served here"))
            }
            Ok(m) => match handler.handle(m, raw.params, raw.frame) {
                Ok(payload) => BackendResponse::ok(id, payload),
                Err(e) => BackendResponse::error(id, e.kind(), e.to_string()),
            },
        };
        write_response(&mut writer, &response)?;
    }
    Ok(())
}

fn hello(id: u64, params: &Value, handler: &dyn RequestHandler) -> BackendResponse {
    match params.get("protocol_version").and_then(Value::as_i64) {
        Some(PROTOCOL_VERSION) => {
            let caps: Vec<&str> = handler.capabilities().iter().map(Method::name).collect();
            BackendResponse::ok(id, json!({ "protocol_version": PROTOCOL_VERSION, "capabilities": caps }))
        }
        other => BackendResponse::error(
            id,
            "VersionMismatch",
            format!("client speaks {other:?}, server speaks {PROTOCOL_VERSION}"),
        ),
    }
}

/// Accepts connections forever, one thread and one fresh handler each.
pub fn serve_tcp<H, F>(listener: TcpListener, make_handler: F) -> Result<()>
where
    H: RequestHandler,
    F: Fn() -> H + Send + Sync + 'static,
{
    let make_handler = Arc::new(make_handler);
    for stream in listener.incoming() {
        let stream = stream.map_err(|e| Error::io("accepting connection", e))?;
        let make_handler = make_handler.clone();
        std::thread::spawn(move || {
            let Ok(read) = stream.try_clone() else { return };
            let mut handler = make_handler();
            let _ = serve(BufReader::new(read), stream, &mut handler);
        });
    }
    Ok(())
}

#[derive(Deserialize)]
struct InitSegmenterParams {
    video_id: String,
    object_id: String,
    first_frame_index: usize,
    first_mask: Mask,
}

#[derive(Deserialize)]
struct FrameParams {
    session_id: SessionId,
    frame_index: usize,
}

#[derive(Deserialize)]
struct PromptParams {
    session_id: SessionId,
    frame_index: usize,
    bbox: BBox,
}

#[derive(Deserialize)]
struct InitTrackerParams {
    first_frame: FrameRef,
    template: BBox,
}

#[derive(Deserialize)]
struct TrackParams {
    frame_index: usize,
}

#[derive(Deserialize)]
struct DescribeParams {
    first_frame: FrameRef,
    mask: Mask,
}

#[derive(Deserialize)]
struct DetectParams {
    frame_index: usize,
    description: String,
}

#[derive(Deserialize)]
struct JudgeParams {
    reference: Crop,
    baseline: Crop,
    auxiliary: Crop,
}

#[derive(Deserialize)]
struct ClassifyParams {
    frame: FrameRef,
    mask: Mask,
}

fn params<T: DeserializeOwned>(method: Method, v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::ProtocolViolation(format!("bad `{method}` params: {e}")))
}

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

/// Serves the in-process mocks. A connection hosts any number of segmenter
/// sessions but one tracker and one detector, matching how the pipeline
/// opens one connection per auxiliary backend.
pub struct MockHandler {
    source: Arc<VideoSource>,
    profiles: BTreeMap<&'static str, MockProfile>,
    segmenters: BTreeMap<String, MockSegmenter>,
    tracker: Option<MockTracker>,
    detector: Option<MockDetector>,
    judges: BTreeMap<String, MockJudge>,
}

impl MockHandler {
    /// `profiles` lists the roles to serve and the mock profile of each.
    pub fn new(source: Arc<VideoSource>, profiles: &[(Role, MockProfile)]) -> Self {
        Self {
            source,
            profiles: profiles.iter().map(|(r, p)| (r.name(), *p)).collect(),
            segmenters: BTreeMap::new(),
            tracker: None,
            detector: None,
            judges: BTreeMap::new(),
        }
    }

    fn profile(&self, role: Role) -> Result<MockProfile> {
        self.profiles
            .get(role.name())
            .copied()
            .ok_or_else(|| Error::BackendUnavailable(format!("{} not served", role.name())))
    }

    fn segmenter_for_session(&mut self, session: &SessionId) -> Result<&mut MockSegmenter> {
        let video = session.0.split('/').next().unwrap_or_default().to_string();
        self.segmenters
            .get_mut(&video)
            .ok_or_else(|| Error::UnknownSession(session.0.clone()))
    }

    fn judge_for(&mut self, video_id: &str) -> Result<&mut MockJudge> {
        if !self.judges.contains_key(video_id) {
            let judge = MockJudge::new(self.source.video(video_id)?, self.profile(Role::Judge)?);
            self.judges.insert(video_id.to_string(), judge);
        }
        Ok(self.judges.get_mut(video_id).expect("inserted"))
    }
}

impl RequestHandler for MockHandler {
    fn capabilities(&self) -> Vec<Method> {
        let mut out = Vec::new();
        for role in [Role::Segmenter, Role::Tracker, Role::Detector, Role::Judge] {
            if self.profiles.contains_key(role.name()) {
                out.extend_from_slice(Method::for_role(role));
            }
        }
        out
    }

    fn handle(&mut self, method: Method, p: Value, _frame: Option<FrameRef>) -> Result<Value> {
        match method {
            Method::InitSegmenter => {
                let p: InitSegmenterParams = params(method, p)?;
                if !self.segmenters.contains_key(&p.video_id) {
                    let seg = MockSegmenter::new(self.source.video(&p.video_id)?, self.profile(Role::Segmenter)?);
                    self.segmenters.insert(p.video_id.clone(), seg);
                }
                let seg = self.segmenters.get_mut(&p.video_id).expect("inserted");
                let session = seg.init(&SegmenterInit {
                    video_id: p.video_id,
                    object_id: p.object_id,
                    first_frame_index: p.first_frame_index,
                    first_mask: p.first_mask,
                })?;
                Ok(json!({ "session_id": session }))
            }
            Method::Propagate => {
                let p: FrameParams = params(method, p)?;
                let mask = self.segmenter_for_session(&p.session_id)?.propagate(&p.session_id, p.frame_index)?;
                Ok(json!({ "mask": mask }))
            }
            Method::PromptBox => {
                let p: PromptParams = params(method, p)?;
                self.segmenter_for_session(&p.session_id)?
                    .prompt_box(&p.session_id, p.frame_index, p.bbox)?;
                Ok(json!({}))
            }
            Method::InitTracker => {
                let p: InitTrackerParams = params(method, p)?;
                let mut tracker = MockTracker::new(self.source.video(&p.first_frame.video_id)?, self.profile(Role::Tracker)?);
                tracker.init(&p.first_frame, p.template)?;
                self.tracker = Some(tracker);
                Ok(json!({}))
            }
            Method::Track => {
                let p: TrackParams = params(method, p)?;
                let tracker = self.tracker.as_mut().ok_or(Error::NotInitialized)?;
                Ok(to_value(tracker.track(p.frame_index)?))
            }
            Method::Describe => {
                let p: DescribeParams = params(method, p)?;
                let mut detector = MockDetector::new(self.source.video(&p.first_frame.video_id)?, self.profile(Role::Detector)?);
                let description = detector.describe(&p.first_frame, &p.mask)?;
                self.detector = Some(detector);
                Ok(json!({ "description": description }))
            }
            Method::Detect => {
                let p: DetectParams = params(method, p)?;
                let detector = self.detector.as_mut().ok_or(Error::NotInitialized)?;
                Ok(to_value(detector.detect(p.frame_index, &p.description)?))
            }
            Method::Judge => {
                let p: JudgeParams = params(method, p)?;
                let judge = self.judge_for(&p.baseline.frame.video_id)?;
                Ok(to_value(judge.compare(&p.reference, &p.baseline, &p.auxiliary)?))
            }
            Method::ClassifySemantic => {
                let p: ClassifyParams = params(method, p)?;
                let judge = self.judge_for(&p.frame.video_id)?;
                Ok(to_value(judge.classify_semantic(&p.frame, &p.mask)?))
            }
            Method::Hello | Method::Shutdown => Err(Error::ProtocolViolation(format!("`{method}` is handled by the server loop"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl RequestHandler for Echo {
        fn capabilities(&self) -> Vec<Method> {
            vec![Method::Judge]
        }

        fn handle(&mut self, _: Method, params: Value, _: Option<FrameRef>) -> Result<Value> {
            Ok(params)
        }
    }

    fn transcript(input: &str) -> Vec<Value> {
        let mut out = Vec::new();
        serve(input.as_bytes(), &mut out, &mut Echo).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn hello_lists_capabilities() {
        let r = transcript("{\"id\":1,\"method\":\"hello\",\"params\":{\"protocol_version\":1}}\n");
        assert_eq!(r[0]["payload"]["capabilities"], json!(["judge"]));
        let r = transcript("{\"id\":1,\"method\":\"hello\",\"params\":{\"protocol_version\":7}}\n");
        assert_eq!(r[0]["error_kind"], "VersionMismatch");
    }

    #[test]
    fn bad_lines_keep_connection_alive() {
        let r = transcript(
            "not json\n{\"id\":2,\"method\":\"teleport\",\"params\":{}}\n{\"id\":3,\"method\":\"track\",\"params\":{}}\n{\"id\":3,\"method\":\"judge\",\"params\":{}}\n{\"id\":4,\"method\":\"judge\",\"params\":{\"x\":1}}\n{\"id\":5,\"method\":\"shutdown\",\"params\":{}}\n{\"id\":6,\"method\":\"judge\",\"params\":{}}\n",
        );
        let kinds: Vec<&Value> = r.iter().map(|v| &v["error_kind"]).collect();
        assert_eq!(kinds[0], "ProtocolViolation");
        assert_eq!(kinds[1], "UnknownMethod");
        assert_eq!(kinds[2], "UnknownMethod");
        assert_eq!(kinds[3], "ProtocolViolation");
        assert_eq!(r[4]["payload"], json!({"x": 1}));
        assert_eq!(r[5]["status"], "ok");
        assert_eq!(r.len(), 6);
    }
}
