//! The four external capabilities the pipeline consumes, and how to obtain
//! them for a video.
//!
//! A segmenter keeps one session per object. Trackers and detectors are
//! created per object; a judge is created per video.

pub mod mock;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::VideoEntry;
use crate::error::{Error, Result};
use crate::geometry::{BBox, Mask};
use crate::protocol::{remote, Endpoint};

/// A frame of a video in the shared dataset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub video_id: String,
    pub frame_index: usize,
}

impl FrameRef {
    pub fn new(video_id: impl Into<String>, frame_index: usize) -> Self {
        Self {
            video_id: video_id.into(),
            frame_index,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmenterInit {
    pub video_id: String,
    pub object_id: String,
    pub first_frame_index: usize,
    pub first_mask: Mask,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A localisation from a tracker or detector. A missing box always carries
/// zero confidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrackOutput {
    bbox: Option<BBox>,
    confidence: f64,
}

impl TrackOutput {
    pub fn new(bbox: Option<BBox>, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::ProtocolViolation(format!("confidence {confidence} outside [0, 1]")));
        }
        if bbox.is_none() && confidence != 0.0 {
            return Err(Error::ProtocolViolation(
                "missing bbox must have zero confidence".into(),
            ));
        }
        Ok(Self { bbox, confidence })
    }

    pub fn found(bbox: BBox, confidence: f64) -> Self {
        Self::new(Some(bbox), confidence).expect("confidence in range")
    }

    pub fn missing() -> Self {
        Self {
            bbox: None,
            confidence: 0.0,
        }
    }

    pub fn bbox(&self) -> Option<BBox> {
        self.bbox
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

impl<'de> Deserialize<'de> for TrackOutput {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            bbox: Option<BBox>,
            confidence: f64,
        }
        let raw = Raw::deserialize(d)?;
        TrackOutput::new(raw.bbox, raw.confidence).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JudgeChoice {
    BaselineCrop,
    AuxiliaryCrop,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub choice: JudgeChoice,
    pub rationale: String,
}

/// A rectangular region of a frame shown to the judge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub frame: FrameRef,
    pub bbox: BBox,
}

/// Answer to "can this target be singled out by a verbal description?".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticVerdict {
    pub distinct: bool,
    pub description: Option<String>,
}

pub trait Segmenter: Send {
    fn init(&mut self, init: &SegmenterInit) -> Result<SessionId>;
    /// Predicted mask for `frame_index`. Frames must increase; the same frame
    /// may be propagated once more right after a prompt on it.
    fn propagate(&mut self, session: &SessionId, frame_index: usize) -> Result<Mask>;
    fn prompt_box(&mut self, session: &SessionId, frame_index: usize, bbox: BBox) -> Result<()>;
}

pub trait Tracker: Send {
    fn init(&mut self, first_frame: &FrameRef, template: BBox) -> Result<()>;
    fn track(&mut self, frame_index: usize) -> Result<TrackOutput>;
}

pub trait Detector: Send {
    fn describe(&mut self, first_frame: &FrameRef, mask: &Mask) -> Result<String>;
    fn detect(&mut self, frame_index: usize, description: &str) -> Result<TrackOutput>;
}

pub trait Judge: Send {
    fn classify_semantic(&mut self, frame: &FrameRef, mask: &Mask) -> Result<SemanticVerdict>;
    fn compare(&mut self, reference: &Crop, baseline: &Crop, auxiliary: &Crop) -> Result<JudgeVerdict>;
}

/// Source of backend instances, queried per video.
pub trait BackendProvider: Sync {
    fn segmenter(&self, video: &VideoEntry) -> Result<Box<dyn Segmenter>>;
    fn tracker(&self, video: &VideoEntry) -> Result<Box<dyn Tracker>>;
    fn detector(&self, video: &VideoEntry) -> Result<Box<dyn Detector>>;
    fn judge(&self, video: &VideoEntry) -> Result<Box<dyn Judge>>;
}

/// Every backend-interface operation. Each maps to exactly one wire method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BackendOp {
    SegmenterInit,
    SegmenterPropagate,
    SegmenterPromptBox,
    TrackerInit,
    TrackerTrack,
    DetectorDescribe,
    DetectorDetect,
    JudgeCompare,
    JudgeClassifySemantic,
}

impl BackendOp {
    pub const ALL: [BackendOp; 9] = [
        BackendOp::SegmenterInit,
        BackendOp::SegmenterPropagate,
        BackendOp::SegmenterPromptBox,
        BackendOp::TrackerInit,
        BackendOp::TrackerTrack,
        BackendOp::DetectorDescribe,
        BackendOp::DetectorDetect,
        BackendOp::JudgeCompare,
        BackendOp::JudgeClassifySemantic,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Segmenter,
    Tracker,
    Detector,
    Judge,
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Segmenter => "segmenter",
            Role::Tracker => "tracker",
            Role::Detector => "detector",
            Role::Judge => "judge",
        }
    }
}

/// Where one backend role comes from: `mock:<profile>`, `exec:<command line>`
/// or `tcp:<host>:<port>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackendSpec {
    Mock(String),
    Remote(Endpoint),
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Mock("oracle".into())
    }
}

impl FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(profile) = s.strip_prefix("mock:") {
            return Ok(BackendSpec::Mock(profile.to_string()));
        }
        s.parse::<Endpoint>().map(BackendSpec::Remote)
    }
}

impl fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendSpec::Mock(p) => write!(f, "mock:{p}"),
            BackendSpec::Remote(e) => write!(f, "{e}"),
        }
    }
}

/// One [`BackendSpec`] per role, resolved against a mock video source.
pub struct BackendSet {
    pub segmenter: BackendSpec,
    pub tracker: BackendSpec,
    pub detector: BackendSpec,
    pub judge: BackendSpec,
    pub source: mock::VideoSource,
    pub timeout: Duration,
}

impl BackendSet {
    pub fn all_mock(profile: &str, source: mock::VideoSource) -> Self {
        let spec = BackendSpec::Mock(profile.to_string());
        Self {
            segmenter: spec.clone(),
            tracker: spec.clone(),
            detector: spec.clone(),
            judge: spec,
            source,
            timeout: Duration::from_millis(crate::config::DEFAULT_TIMEOUT_MS),
        }
    }

    /// Checks every mock profile name up front.
    pub fn validate(&self) -> Result<()> {
        for (role, spec) in self.roles() {
            if let BackendSpec::Mock(p) = spec {
                mock::MockProfile::for_role(role, p)?;
            }
        }
        Ok(())
    }

    fn roles(&self) -> [(Role, &BackendSpec); 4] {
        [
            (Role::Segmenter, &self.segmenter),
            (Role::Tracker, &self.tracker),
            (Role::Detector, &self.detector),
            (Role::Judge, &self.judge),
        ]
    }
}

impl BackendProvider for BackendSet {
    fn segmenter(&self, video: &VideoEntry) -> Result<Box<dyn Segmenter>> {
        match &self.segmenter {
            BackendSpec::Mock(p) => {
                let profile = mock::MockProfile::for_role(Role::Segmenter, p)?;
                Ok(Box::new(mock::MockSegmenter::new(self.source.video(&video.video_id)?, profile)))
            }
            BackendSpec::Remote(e) => Ok(Box::new(remote::RemoteSegmenter::connect(e, self.timeout)?)),
        }
    }

    fn tracker(&self, video: &VideoEntry) -> Result<Box<dyn Tracker>> {
        match &self.tracker {
            BackendSpec::Mock(p) => {
                let profile = mock::MockProfile::for_role(Role::Tracker, p)?;
                Ok(Box::new(mock::MockTracker::new(self.source.video(&video.video_id)?, profile)))
            }
            BackendSpec::Remote(e) => Ok(Box::new(remote::RemoteTracker::connect(e, self.timeout)?)),
        }
    }

    fn detector(&self, video: &VideoEntry) -> Result<Box<dyn Detector>> {
        match &self.detector {
            BackendSpec::Mock(p) => {
                let profile = mock::MockProfile::for_role(Role::Detector, p)?;
                Ok(Box::new(mock::MockDetector::new(self.source.video(&video.video_id)?, profile)))
            }
            BackendSpec::Remote(e) => Ok(Box::new(remote::RemoteDetector::connect(e, self.timeout)?)),
        }
    }

    fn judge(&self, video: &VideoEntry) -> Result<Box<dyn Judge>> {
        match &self.judge {
            BackendSpec::Mock(p) => {
                let profile = mock::MockProfile::for_role(Role::Judge, p)?;
                Ok(Box::new(mock::MockJudge::new(self.source.video(&video.video_id)?, profile)))
            }
            BackendSpec::Remote(e) => Ok(Box::new(remote::RemoteJudge::connect(e, self.timeout)?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn track_output_invariant() {
        assert!(TrackOutput::new(None, 0.3).is_err());
        assert!(TrackOutput::new(None, 0.0).is_ok());
        let b = BBox::new(0, 0, 2, 2).unwrap();
        assert!(TrackOutput::new(Some(b), 1.5).is_err());
        assert!(serde_json::from_str::<TrackOutput>(r#"{"bbox":null,"confidence":0.5}"#).is_err());
        let t: TrackOutput = serde_json::from_str(r#"{"bbox":[1,2,3,4],"confidence":0.5}"#).unwrap();
        assert_eq!(t.bbox().unwrap().to_array(), [1, 2, 3, 4]);
    }

    #[test]
    fn backend_spec_grammar() {
        assert_eq!("mock:oracle".parse::<BackendSpec>().unwrap(), BackendSpec::Mock("oracle".into()));
        assert!(matches!(
            "tcp:127.0.0.1:9000".parse::<BackendSpec>().unwrap(),
            BackendSpec::Remote(Endpoint::Tcp(_))
        ));
        assert!(matches!(
            "exec:python3 server.py --x".parse::<BackendSpec>().unwrap(),
            BackendSpec::Remote(Endpoint::Exec(_))
        ));
        assert!("grpc:foo".parse::<BackendSpec>().is_err());
        assert_eq!(BackendSpec::default().to_string(), "mock:oracle");
    }
}
