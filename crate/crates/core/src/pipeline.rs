//! Per-video orchestration: classify each object, attach its enhancement
//! path, then propagate frame by frame with the fusion gate in the loop.
//!
//! Objects run one after another and never share fusion state. Videos are
//! the unit of parallelism. A segmenter failure aborts its video; tracker,
//! detector and judge failures only cost the auxiliary prompt.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backends::{
    BackendProvider, Crop, Detector, FrameRef, Judge, Segmenter, SegmenterInit, SessionId, TrackOutput, Tracker,
};
use crate::classification::{area_ratio, classify_target, TargetClass, TargetKind};
use crate::config::{Config, FusionConfig};
use crate::dataset::{frame_file_name, write_json, write_mask_sequence, write_text, Dataset, ObjectEntry, VideoEntry};
use crate::error::{Error, Result};
use crate::fusion::{fuse_semantic, fuse_tiny, FusionAction, FusionDecision};
use crate::geometry::{mask_to_bbox, BBox, Mask};
use crate::metrics::{evaluate, EvalReport, ObjectSequences, Scores, COLUMN_NAMES};

/// Auxiliary backend attached to a non-regular object. `None` inside a
/// variant means the backend could not be set up; every gate then sees a
/// missing box.
pub enum Enhancement {
    None,
    Tracker(Option<Box<dyn Tracker>>),
    Detector(Option<(Box<dyn Detector>, String)>),
}

pub struct ObjectState {
    pub object_id: String,
    pub target_class: TargetClass,
    pub segmenter_session: SessionId,
    pub enhancement: Enhancement,
    /// Box of the first-frame annotation, shown to the judge as reference.
    pub reference_crop: BBox,
    pub first_frame_index: usize,
    pub decisions: Vec<DecisionRecord>,
}

/// One gate evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub video_id: String,
    pub object_id: String,
    pub frame_index: usize,
    #[serde(flatten)]
    pub decision: FusionDecision,
}

impl fmt::Display for DecisionRecord {
    /// `video object frame action reason iou=<v|-> bbox=<x0,y0,x1,y1|->`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = &self.decision;
        write!(
            f,
            "{} {} {} {} {}",
            self.video_id, self.object_id, self.frame_index, d.action, d.reason
        )?;
        match d.iou_observed {
            Some(v) => write!(f, " iou={v:.6}")?,
            None => write!(f, " iou=-")?,
        }
        match d.chosen_bbox {
            Some(b) => write!(f, " bbox={b}"),
            None => write!(f, " bbox=-"),
        }
    }
}

/// Accumulated wall-clock per stage, in seconds. Always zero on targets
/// without a monotonic clock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub classification: f64,
    pub propagation: f64,
    pub enhancement: f64,
    pub fusion: f64,
}

#[derive(Clone, Copy)]
enum Stage {
    Classification,
    Propagation,
    Enhancement,
    Fusion,
}

impl Timings {
    fn slot(&mut self, stage: Stage) -> &mut f64 {
        match stage {
            Stage::Classification => &mut self.classification,
            Stage::Propagation => &mut self.propagation,
            Stage::Enhancement => &mut self.enhancement,
            Stage::Fusion => &mut self.fusion,
        }
    }

    #[cfg(not(target_arch = "wasm32"))]
    fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = std::time::Instant::now();
        let out = f();
        *self.slot(stage) += start.elapsed().as_secs_f64();
        out
    }

    #[cfg(target_arch = "wasm32")]
    fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let _ = self.slot(stage);
        f()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub video_id: String,
    pub predictions: ObjectSequences,
    pub classes: BTreeMap<String, TargetClass>,
    pub decisions: Vec<DecisionRecord>,
    pub timings: Timings,
    pub config_snapshot: FusionConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Skip classification and enhancement: plain segmenter propagation.
    pub baseline_only: bool,
    /// Videos processed concurrently.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            baseline_only: false,
            jobs: 1,
        }
    }
}

struct VideoRun<'a> {
    video: &'a VideoEntry,
    provider: &'a dyn BackendProvider,
    config: &'a Config,
    segmenter: Box<dyn Segmenter>,
    judge: Option<Box<dyn Judge>>,
    timings: Timings,
}

impl VideoRun<'_> {
    fn frame(&self, t: usize) -> FrameRef {
        FrameRef::new(&self.video.video_id, t)
    }

    fn classify(&mut self, obj: &ObjectEntry) -> TargetClass {
        let frame = self.frame(obj.first_frame_index);
        let dims = self.video.dims();
        let cfg = &self.config.fusion;
        let mut judge = self.judge.take();
        let class = self.timings.time(Stage::Classification, || {
            let fallback = TargetClass::regular(area_ratio(&obj.first_mask, dims));
            let Some(judge) = judge.as_deref_mut() else {
                // Without a judge only the area test can fire.
                return match classify_target(&obj.first_mask, &frame, dims, cfg, &mut NoJudge) {
                    Ok(c) => c,
                    Err(_) => fallback,
                };
            };
            classify_target(&obj.first_mask, &frame, dims, cfg, judge).unwrap_or(fallback)
        });
        self.judge = judge;
        class
    }

    fn enhancement(&mut self, obj: &ObjectEntry, kind: TargetKind, template: BBox) -> Enhancement {
        let first = self.frame(obj.first_frame_index);
        let (provider, video) = (self.provider, self.video);
        self.timings.time(Stage::Enhancement, || match kind {
            TargetKind::Regular => Enhancement::None,
            TargetKind::Tiny => Enhancement::Tracker(provider.tracker(video).ok().and_then(|mut t| {
                t.init(&first, template).ok()?;
                Some(t)
            })),
            TargetKind::SemanticDominated => {
                Enhancement::Detector(provider.detector(video).ok().and_then(|mut d| {
                    let desc = d.describe(&first, &obj.first_mask).ok()?;
                    Some((d, desc))
                }))
            }
        })
    }

    fn auxiliary(&mut self, enhancement: &mut Enhancement, t: usize) -> TrackOutput {
        self.timings.time(Stage::Enhancement, || {
            let out = match enhancement {
                Enhancement::Tracker(Some(tracker)) => tracker.track(t),
                Enhancement::Detector(Some((detector, desc))) => detector.detect(t, desc),
                _ => return TrackOutput::missing(),
            };
            out.unwrap_or_else(|_| TrackOutput::missing())
        })
    }

    fn propagate(&mut self, session: &SessionId, t: usize) -> Result<Mask> {
        let seg = &mut self.segmenter;
        let mask = self.timings.time(Stage::Propagation, || seg.propagate(session, t))?;
        if mask.dims() != self.video.dims() {
            return Err(Error::DimensionMismatch {
                left_w: mask.width(),
                left_h: mask.height(),
                right_w: self.video.width,
                right_h: self.video.height,
            });
        }
        Ok(mask)
    }

    fn run_object(&mut self, obj: &ObjectEntry, baseline_only: bool) -> Result<(Vec<Mask>, ObjectState)> {
        let video = self.video;
        let first = obj.first_frame_index;
        let reference_crop = mask_to_bbox(&obj.first_mask).ok_or(Error::EmptyAnnotation)?;
        let target_class = if baseline_only {
            TargetClass::regular(area_ratio(&obj.first_mask, video.dims()))
        } else {
            self.classify(obj)
        };
        let seg = &mut self.segmenter;
        let session = self.timings.time(Stage::Propagation, || {
            seg.init(&SegmenterInit {
                video_id: video.video_id.clone(),
                object_id: obj.object_id.clone(),
                first_frame_index: first,
                first_mask: obj.first_mask.clone(),
            })
        })?;
        let enhancement = self.enhancement(obj, target_class.kind, reference_crop);
        let mut state = ObjectState {
            object_id: obj.object_id.clone(),
            target_class,
            segmenter_session: session,
            enhancement,
            reference_crop,
            first_frame_index: first,
            decisions: Vec::new(),
        };
        let mut masks = vec![Mask::empty(video.dims()); video.frame_count];
        masks[first] = obj.first_mask.clone();
        let stride = self.config.fusion.evaluate_every;
        for t in first + 1..video.frame_count {
            let mut mask = self.propagate(&state.segmenter_session, t)?;
            if state.target_class.kind != TargetKind::Regular && t % stride == 0 {
                let decision = self.gate(&mut state, &mask, t);
                if decision.action == FusionAction::InjectAuxiliary {
                    let bbox = decision.chosen_bbox.expect("inject carries a box");
                    let seg = &mut self.segmenter;
                    let session = &state.segmenter_session;
                    self.timings
                        .time(Stage::Propagation, || seg.prompt_box(session, t, bbox))?;
                    if self.config.pipeline.apply_same_frame {
                        mask = self.propagate(&state.segmenter_session, t)?;
                    }
                }
                state.decisions.push(DecisionRecord {
                    video_id: video.video_id.clone(),
                    object_id: obj.object_id.clone(),
                    frame_index: t,
                    decision,
                });
            }
            masks[t] = mask;
        }
        Ok((masks, state))
    }

    fn gate(&mut self, state: &mut ObjectState, mask: &Mask, t: usize) -> FusionDecision {
        let aux = self.auxiliary(&mut state.enhancement, t);
        let cfg = self.config.fusion;
        let reference = Crop {
            frame: self.frame(state.first_frame_index),
            bbox: state.reference_crop,
        };
        let frame = self.frame(t);
        let kind = state.target_class.kind;
        let judge = &mut self.judge;
        self.timings.time(Stage::Fusion, || match kind {
            TargetKind::Tiny => fuse_tiny(mask, &aux, &cfg),
            _ => {
                let judge: &mut dyn Judge = match judge.as_deref_mut() {
                    Some(j) => j,
                    None => &mut NoJudge,
                };
                fuse_semantic(mask, &aux, &reference, &frame, judge, &cfg)
            }
        })
    }
}

/// Stand-in when no judge backend could be reached.
struct NoJudge;

impl Judge for NoJudge {
    fn classify_semantic(&mut self, _: &FrameRef, _: &Mask) -> Result<crate::backends::SemanticVerdict> {
        Err(Error::BackendUnavailable("no judge".into()))
    }

    fn compare(&mut self, _: &Crop, _: &Crop, _: &Crop) -> Result<crate::backends::JudgeVerdict> {
        Err(Error::BackendUnavailable("no judge".into()))
    }
}

/// Runs every object of one video.
pub fn run_video(
    video: &VideoEntry,
    provider: &dyn BackendProvider,
    config: &Config,
    baseline_only: bool,
) -> Result<RunResult> {
    video.validate()?;
    config.validate()?;
    let segmenter = provider.segmenter(video)?;
    let judge = if baseline_only { None } else { provider.judge(video).ok() };
    let mut run = VideoRun {
        video,
        provider,
        config,
        segmenter,
        judge,
        timings: Timings::default(),
    };
    let mut predictions = BTreeMap::new();
    let mut classes = BTreeMap::new();
    let mut decisions = Vec::new();
    for obj in &video.objects {
        let (masks, state) = run.run_object(obj, baseline_only)?;
        predictions.insert(obj.object_id.clone(), masks);
        classes.insert(obj.object_id.clone(), state.target_class);
        decisions.extend(state.decisions);
    }
    Ok(RunResult {
        video_id: video.video_id.clone(),
        predictions,
        classes,
        decisions,
        timings: run.timings,
        config_snapshot: config.fusion,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedVideo {
    pub video_id: String,
    pub error_kind: String,
    pub error: String,
}

pub struct VideoOutcome {
    pub video_id: String,
    pub result: Result<(RunResult, Option<EvalReport>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub video_id: String,
    pub report: EvalReport,
}

/// Evaluation of a whole run: per-video reports and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub aggregate: Option<Scores>,
    pub videos: Vec<VideoReport>,
    pub failed: Vec<FailedVideo>,
}

impl DatasetReport {
    pub fn new(videos: Vec<VideoReport>, failed: Vec<FailedVideo>) -> Self {
        Self {
            aggregate: Scores::mean(videos.iter().map(|v| &v.report.scores)),
            videos,
            failed,
        }
    }

    /// Table with one row per video and a final `mean` row.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let width = self
            .videos
            .iter()
            .map(|v| v.video_id.chars().count())
            .max()
            .unwrap_or(0)
            .max(5);
        let header: Vec<String> = COLUMN_NAMES.iter().map(|c| format!("{c:>15}")).collect();
        out.push_str(&format!("{:<width$}{}\n", "video", header.join("")));
        let row = |name: &str, s: &Scores| {
            let cells: Vec<String> = s.formatted().iter().map(|c| format!("{c:>15}")).collect();
            format!("{name:<width$}{}\n", cells.join(""))
        };
        for v in &self.videos {
            out.push_str(&row(&v.video_id, &v.report.scores));
        }
        if let Some(agg) = &self.aggregate {
            out.push_str(&row("mean", agg));
        }
        for f in &self.failed {
            out.push_str(&format!("FAILED {} {}: {}\n", f.video_id, f.error_kind, f.error));
        }
        out
    }
}

pub struct DatasetRun {
    pub outcomes: Vec<VideoOutcome>,
    pub config: Config,
}

impl DatasetRun {
    pub fn failed(&self) -> Vec<FailedVideo> {
        self.outcomes
            .iter()
            .filter_map(|o| match &o.result {
                Err(e) => Some(FailedVideo {
                    video_id: o.video_id.clone(),
                    error_kind: e.kind().to_string(),
                    error: e.to_string(),
                }),
                Ok(_) => None,
            })
            .collect()
    }

    pub fn results(&self) -> impl Iterator<Item = &RunResult> {
        self.outcomes.iter().filter_map(|o| o.result.as_ref().ok().map(|(r, _)| r))
    }

    pub fn report(&self) -> DatasetReport {
        let videos = self
            .outcomes
            .iter()
            .filter_map(|o| match &o.result {
                Ok((_, Some(report))) => Some(VideoReport {
                    video_id: o.video_id.clone(),
                    report: report.clone(),
                }),
                _ => None,
            })
            .collect();
        DatasetReport::new(videos, self.failed())
    }

    /// Decision records of all successful videos, one per line.
    pub fn decision_log(&self) -> String {
        self.results()
            .flat_map(|r| r.decisions.iter())
            .map(|d| format!("{d}\n"))
            .collect()
    }

    /// Writes predictions, `decisions.log`, `report.txt` and `report.json`.
    pub fn write_artifacts(&self, out: &Path) -> Result<()> {
        for r in self.results() {
            for (obj, masks) in &r.predictions {
                write_mask_sequence(&out.join(&r.video_id).join(obj), masks)?;
            }
        }
        write_text(&out.join("decisions.log"), &self.decision_log())?;
        let report = self.report();
        write_text(&out.join("report.txt"), &report.to_text())?;
        write_json(&out.join("report.json"), &report)
    }
}

fn run_one(dataset: &Dataset, video: &VideoEntry, provider: &dyn BackendProvider, config: &Config, baseline_only: bool) -> Result<(RunResult, Option<EvalReport>)> {
    let result = run_video(video, provider, config, baseline_only)?;
    let report = match dataset.load_gt(video)? {
        Some(gt) => Some(evaluate(&result.predictions, &gt, &config.fusion.metrics())?),
        None => None,
    };
    Ok((result, report))
}

/// Runs every video of a dataset, up to `opts.jobs` at a time. A failing
/// video is reported and never stops the others; outcomes keep manifest
/// order.
pub fn run_dataset(dataset: &Dataset, provider: &dyn BackendProvider, config: &Config, opts: RunOptions) -> Result<DatasetRun> {
    config.validate()?;
    let videos = &dataset.manifest.videos;
    let slots: Vec<Mutex<Option<VideoOutcome>>> = videos.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = opts.jobs.clamp(1, videos.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(video) = videos.get(i) else { break };
                let result = run_one(dataset, video, provider, config, opts.baseline_only);
                *slots[i].lock().expect("slot lock") = Some(VideoOutcome {
                    video_id: video.video_id.clone(),
                    result,
                });
            });
        }
    });
    let outcomes = slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every video ran"))
        .collect();
    Ok(DatasetRun {
        outcomes,
        config: *config,
    })
}

/// Path of one prediction file inside a run directory.
pub fn prediction_path(out: &Path, video_id: &str, object_id: &str, t: usize) -> std::path::PathBuf {
    out.join(video_id).join(object_id).join(frame_file_name(t, "rle"))
}
