//! Client behaviour against scripted fixture servers and the in-process
//! mock server.

use std::io::BufReader;
use std::net::TcpListener;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::json;
use tep_core::backends::mock::{MockProfile, VideoSource};
use tep_core::backends::{
    BackendProvider, BackendSet, BackendSpec, Crop, Detector, FrameRef, Judge, JudgeChoice, Role, Segmenter,
    SegmenterInit, Tracker,
};
use tep_core::config::Config;
use tep_core::dataset::{Dataset, VideoEntry};
use tep_core::geometry::{BBox, Dims, Mask};
use tep_core::pipeline::run_video;
use tep_core::protocol::remote::{RemoteDetector, RemoteJudge, RemoteSegmenter, RemoteTracker};
use tep_core::protocol::server::{serve_tcp, MockHandler};
use tep_core::protocol::{Connection, Endpoint, Method};
use tep_core::simulator::{generate, scenario_suite, Suite};
use tep_core::Error;

fn fixture(mode: &str, extra: &str) -> Endpoint {
    let script = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/fake_server.py");
    Endpoint::Exec(format!("python3 {script} {mode} {extra}").trim().to_string())
}

const T: Duration = Duration::from_secs(10);

fn crop(t: usize) -> Crop {
    Crop {
        frame: FrameRef::new("v", t),
        bbox: BBox::new(1, 1, 5, 5).unwrap(),
    }
}

#[test]
fn handshake_reports_capabilities() {
    let conn = Connection::connect(&fixture("judge-echo", ""), T).unwrap();
    assert_eq!(conn.capabilities(), ["judge"]);
    assert!(conn.require(&[Method::Judge]).is_ok());
    assert!(matches!(conn.require(&[Method::Track]), Err(Error::BackendUnavailable(_))));
}

#[test]
fn judge_only_server_cannot_act_as_tracker() {
    let err = RemoteTracker::connect(&fixture("judge-echo", ""), T).err().unwrap();
    assert!(matches!(err, Error::BackendUnavailable(_)), "{err}");
}

#[test]
fn version_mismatch() {
    let err = Connection::connect(&fixture("wrong-version", ""), T).err().unwrap();
    assert!(matches!(err, Error::VersionMismatch(2)), "{err}");
}

#[test]
fn dead_endpoints() {
    let err = Connection::connect(&Endpoint::Exec("/nonexistent/server".into()), T).err().unwrap();
    assert!(matches!(err, Error::SpawnFailed(..)), "{err}");
    // A process that exits without speaking.
    let err = Connection::connect(&Endpoint::Exec("true".into()), T).err().unwrap();
    assert!(matches!(err, Error::SpawnFailed(..)), "{err}");
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = Connection::connect(&Endpoint::Tcp(format!("127.0.0.1:{port}")), T).err().unwrap();
    assert!(matches!(err, Error::ConnectRefused(..)), "{err}");
}

#[test]
fn malformed_and_misnumbered_responses() {
    let mut conn = Connection::connect(&fixture("malformed", ""), T).unwrap();
    let err = conn.call(Method::Track, json!({"frame_index": 1}), None).unwrap_err();
    assert!(matches!(err, Error::ProtocolViolation(_)), "{err}");
    let mut conn = Connection::connect(&fixture("wrong-id", ""), T).unwrap();
    let err = conn.call(Method::Track, json!({"frame_index": 1}), None).unwrap_err();
    assert!(matches!(err, Error::ProtocolViolation(_)), "{err}");
}

#[test]
fn remote_error_passes_kind_through() {
    let mut judge = RemoteJudge::new(Connection::connect(&fixture("raise", ""), T).unwrap());
    let err = judge.compare(&crop(0), &crop(3), &crop(3)).unwrap_err();
    match err {
        Error::RemoteError { kind, message } => {
            assert_eq!(kind, "ModelCrashed");
            assert_eq!(message, "weights not found");
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn track_response_decodes() {
    let mut tracker = RemoteTracker::connect(&fixture("mirror", ""), T).unwrap();
    assert!(matches!(tracker.track(1), Err(Error::NotInitialized)));
    tracker.init(&FrameRef::new("v", 0), BBox::new(0, 0, 2, 2).unwrap()).unwrap();
    let out = tracker.track(1).unwrap();
    assert_eq!(out.bbox().unwrap().to_array(), [1, 2, 3, 4]);
    assert_eq!(out.confidence(), 0.75);
    let mut det = RemoteDetector::connect(&fixture("mirror", ""), T).unwrap();
    let m = Mask::from_bbox(Dims::new(8, 8), &BBox::new(1, 1, 3, 3).unwrap());
    assert_eq!(det.describe(&FrameRef::new("v", 0), &m).unwrap(), "#1 mirrored");
    assert!(det.detect(2, "#1").unwrap().bbox().is_none());
}

#[test]
fn masks_round_trip_bit_identical() {
    let mut seg = RemoteSegmenter::connect(&fixture("strict", ""), T).unwrap();
    let dims = Dims::new(37, 23);
    let mask = Mask::from_fn(dims, |x, y| (x * 7 + y * 3) % 5 == 0 || (x > 30 && y < 4));
    let session = seg
        .init(&SegmenterInit {
            video_id: "v".into(),
            object_id: "9".into(),
            first_frame_index: 0,
            first_mask: mask.clone(),
        })
        .unwrap();
    for t in 1..4 {
        let back = seg.propagate(&session, t).unwrap();
        assert_eq!(back, mask);
        assert_eq!(back.to_rle_string(), mask.to_rle_string());
    }
}

#[test]
fn judge_sees_the_three_crops() {
    let mut judge = RemoteJudge::new(Connection::connect(&fixture("judge-echo", ""), T).unwrap());
    let v = judge.compare(&crop(0), &crop(4), &crop(4)).unwrap();
    assert_eq!(v.choice, JudgeChoice::AuxiliaryCrop);
    let echoed: serde_json::Value = serde_json::from_str(&v.rationale).unwrap();
    assert_eq!(echoed["baseline"]["bbox"], json!([1, 1, 5, 5]));
    assert_eq!(echoed["reference"]["frame"], json!({"video_id": "v", "frame_index": 0}));
}

#[test]
fn timeout_then_late_reply_is_skipped() {
    let mut tracker = RemoteTracker::connect(&fixture("slow", "0.6"), Duration::from_millis(200)).unwrap();
    tracker.init(&FrameRef::new("v", 0), BBox::new(0, 0, 2, 2).unwrap()).unwrap();
    let start = Instant::now();
    assert!(matches!(tracker.track(1), Err(Error::BackendTimeout(200))));
    assert!(start.elapsed() < Duration::from_millis(550));
    // The next call first drains the stale reply, then times out on its own.
    std::thread::sleep(Duration::from_millis(700));
    assert!(matches!(tracker.track(2), Err(Error::BackendTimeout(200))));
}

/// Provider whose tracker and detector live behind a fixture endpoint while
/// the segmenter and judge are in-process mocks.
struct Mixed {
    inner: BackendSet,
    aux: Endpoint,
    timeout: Duration,
}

impl BackendProvider for Mixed {
    fn segmenter(&self, v: &VideoEntry) -> tep_core::Result<Box<dyn Segmenter>> {
        self.inner.segmenter(v)
    }
    fn tracker(&self, _: &VideoEntry) -> tep_core::Result<Box<dyn Tracker>> {
        Ok(Box::new(RemoteTracker::connect(&self.aux, self.timeout)?))
    }
    fn detector(&self, _: &VideoEntry) -> tep_core::Result<Box<dyn Detector>> {
        Ok(Box::new(RemoteDetector::connect(&self.aux, self.timeout)?))
    }
    fn judge(&self, v: &VideoEntry) -> tep_core::Result<Box<dyn Judge>> {
        self.inner.judge(v)
    }
}

#[test]
fn auxiliary_timeouts_degrade_to_baseline() {
    let spec = &scenario_suite(Suite::DriftTiny, 0)[0];
    let mut spec = spec.clone();
    spec.num_frames = 6;
    let video = generate("slow", &spec).unwrap();
    let mut inner = BackendSet::all_mock("scenario", VideoSource::memory(std::slice::from_ref(&video)));
    inner.tracker = BackendSpec::default();
    let provider = Mixed {
        inner,
        aux: fixture("slow", "0.3"),
        timeout: Duration::from_millis(100),
    };
    let baseline = run_video(&video.manifest_entry, &provider, &Config::default(), true).unwrap();
    let r = run_video(&video.manifest_entry, &provider, &Config::default(), false).unwrap();
    assert_eq!(r.decisions.len(), 5);
    assert!(r
        .decisions
        .iter()
        .all(|d| d.decision.reason == tep_core::fusion::FusionReason::AuxMissing));
    assert_eq!(r.predictions, baseline.predictions);

    // Unreachable auxiliary backends degrade the same way.
    let provider = Mixed {
        aux: Endpoint::Exec("/nonexistent".into()),
        ..provider
    };
    let r = run_video(&video.manifest_entry, &provider, &Config::default(), false).unwrap();
    assert_eq!(r.predictions, baseline.predictions);
}

#[test]
fn tcp_mock_server_matches_in_process_mocks() {
    let videos: Vec<_> = scenario_suite(Suite::Crowded, 1)
        .iter()
        .take(2)
        .map(|s| generate(&s.name, s).unwrap())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let manifest = tep_core::dataset::write_synthetic_dataset(dir.path(), &videos).unwrap();
    let dataset = Dataset::load(&manifest).unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let source = Arc::new(VideoSource::disk(dataset.root.clone()));
    let profiles: Vec<(Role, MockProfile)> = [Role::Segmenter, Role::Tracker, Role::Detector, Role::Judge]
        .into_iter()
        .map(|r| (r, MockProfile::Scenario))
        .collect();
    std::thread::spawn(move || serve_tcp(listener, move || MockHandler::new(source.clone(), &profiles)));
    let remote_spec = BackendSpec::Remote(Endpoint::Tcp(addr.to_string()));
    let mut remote = BackendSet::all_mock("scenario", VideoSource::disk(dataset.root.clone()));
    remote.segmenter = remote_spec.clone();
    remote.tracker = remote_spec.clone();
    remote.detector = remote_spec.clone();
    remote.judge = remote_spec;
    let local = BackendSet::all_mock("scenario", VideoSource::memory(&videos));
    for v in &dataset.manifest.videos {
        let a = run_video(v, &local, &Config::default(), false).unwrap();
        let b = run_video(v, &remote, &Config::default(), false).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.decisions, b.decisions);
    }
}

#[test]
fn stdio_serve_loop_over_pipes() {
    // Drive the server loop through an in-memory transcript.
    let video = generate("p", &scenario_suite(Suite::Reappear, 2)[0]).unwrap();
    let source = Arc::new(VideoSource::memory(std::slice::from_ref(&video)));
    let mut handler = MockHandler::new(source, &[(Role::Judge, MockProfile::Oracle)]);
    let obj = &video.manifest_entry.objects[0];
    let input = format!(
        "{}\n{}\n{}\n",
        json!({"id": 1, "method": "hello", "params": {"protocol_version": 1}}),
        json!({"id": 2, "method": "classify_semantic", "params": {"frame": {"video_id": "p", "frame_index": obj.first_frame_index}, "mask": obj.first_mask}}),
        json!({"id": 3, "method": "propagate", "params": {}}),
    );
    let mut out = Vec::new();
    tep_core::protocol::server::serve(BufReader::new(input.as_bytes()), &mut out, &mut handler).unwrap();
    let lines: Vec<serde_json::Value> = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines[0]["payload"]["capabilities"], json!(["judge", "classify_semantic"]));
    assert_eq!(lines[1]["status"], "ok");
    assert_eq!(lines[2]["error_kind"], "UnknownMethod");
}
