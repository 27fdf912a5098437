//! Browser demo: render a synthetic scenario with prediction overlays,
//! compare the baseline against the enhanced pipeline frame by frame, and
//! probe the tracker fusion gate.

use serde::Serialize;
use tep_core::backends::mock::VideoSource;
use tep_core::backends::{BackendSet, TrackOutput};
use tep_core::config::{Config, FusionConfig};
use tep_core::fusion::{fuse_tiny, FusionDecision};
use tep_core::geometry::{boundary_pixels, BBox, Dims, Mask};
use tep_core::metrics::{evaluate, score_frames, Scores};
use tep_core::pipeline::{run_video, RunResult};
use tep_core::simulator::{generate, scenario_suite, Identity, Suite, SyntheticVideo, BACKGROUND, CLUTTER, SUITE_SIZE};
use wasm_bindgen::prelude::*;

/// Which overlays `render` draws.
#[derive(Clone, Copy, Debug, Default)]
pub struct Layers {
    pub ground_truth: bool,
    pub baseline: bool,
    pub enhanced: bool,
}

#[derive(Debug, Serialize)]
pub struct ObjectTrace {
    pub object_id: String,
    pub kind: String,
    /// Per-frame J; `None` where the frame is not scored.
    pub j_baseline: Vec<Option<f64>>,
    pub j_enhanced: Vec<Option<f64>>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub video_id: String,
    pub frame_count: usize,
    pub baseline: Scores,
    pub enhanced: Scores,
    pub objects: Vec<ObjectTrace>,
    pub decisions: Vec<String>,
}

/// One scenario video with a baseline run and an enhanced run.
pub struct Demo {
    video: SyntheticVideo,
    config: Config,
    baseline: RunResult,
    enhanced: RunResult,
}

fn scenario_mocks(video: &SyntheticVideo) -> BackendSet {
    BackendSet::all_mock("scenario", VideoSource::memory(std::slice::from_ref(video)))
}

impl Demo {
    pub fn new(suite: &str, seed: u64, index: usize) -> Result<Self, String> {
        let suite: Suite = suite.parse().map_err(|e: tep_core::Error| e.to_string())?;
        if index >= SUITE_SIZE {
            return Err(format!("video index {index} out of range 0..{SUITE_SIZE}"));
        }
        let spec = &scenario_suite(suite, seed)[index];
        let video = generate(&spec.name, spec).map_err(|e| e.to_string())?;
        let config = Config::default();
        let set = scenario_mocks(&video);
        let run = |baseline_only| run_video(&video.manifest_entry, &set, &config, baseline_only).map_err(|e| e.to_string());
        let baseline = run(true)?;
        let enhanced = run(false)?;
        Ok(Self {
            video,
            config,
            baseline,
            enhanced,
        })
    }

    /// Re-runs the enhanced pipeline with new gate thresholds.
    pub fn set_thresholds(&mut self, iou_threshold: f64, confidence_threshold: f64) -> Result<(), String> {
        let mut config = self.config;
        config.fusion.iou_threshold = iou_threshold;
        config.fusion.confidence_threshold = confidence_threshold;
        config.validate().map_err(|e| e.to_string())?;
        let set = scenario_mocks(&self.video);
        self.enhanced = run_video(&self.video.manifest_entry, &set, &config, false).map_err(|e| e.to_string())?;
        self.config = config;
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.video.spec.dims()
    }

    pub fn frame_count(&self) -> usize {
        self.video.frames.len()
    }

    fn label_color(&self, label: u16) -> [u8; 3] {
        match label {
            BACKGROUND => [24, 26, 31],
            CLUTTER => [70, 72, 80],
            id => match self.video.spec.actor(id).map(|a| a.identity) {
                Some(Identity::Target) => [66, 135, 245],
                Some(Identity::Distractor) => [150, 120, 90],
                _ => [110, 110, 120],
            },
        }
    }

    /// RGBA pixels of frame `t`, row-major.
    pub fn render(&self, t: usize, layers: Layers) -> Vec<u8> {
        let Some(grid) = self.video.frames.get(t) else {
            return Vec::new();
        };
        let d = grid.dims();
        let mut rgba = Vec::with_capacity(d.area() as usize * 4);
        for &label in grid.labels() {
            rgba.extend(self.label_color(label));
            rgba.push(255);
        }
        let mut outline = |m: &Mask, color: [u8; 3]| {
            for p in boundary_pixels(m) {
                let i = (p.y as usize * d.width as usize + p.x as usize) * 4;
                rgba[i..i + 3].copy_from_slice(&color);
            }
        };
        for (id, seq) in &self.video.gt {
            if layers.ground_truth {
                outline(&seq[t], [240, 240, 240]);
            }
            if layers.baseline {
                outline(&self.baseline.predictions[id][t], [235, 64, 52]);
            }
            if layers.enhanced {
                outline(&self.enhanced.predictions[id][t], [80, 220, 100]);
            }
        }
        rgba
    }

    pub fn summary(&self) -> Result<Summary, String> {
        let metrics = self.config.fusion.metrics();
        let score = |r: &RunResult| {
            evaluate(&r.predictions, &self.video.gt, &metrics)
                .map(|e| e.scores)
                .map_err(|e| e.to_string())
        };
        let per_frame = |r: &RunResult, id: &str| -> Result<Vec<Option<f64>>, String> {
            let frames = score_frames(&r.predictions[id], &self.video.gt[id], &metrics).map_err(|e| e.to_string())?;
            Ok(frames.iter().map(|f| f.counted.then_some(f.j)).collect())
        };
        let mut objects = Vec::new();
        for id in self.video.gt.keys() {
            objects.push(ObjectTrace {
                object_id: id.clone(),
                kind: format!("{:?}", self.enhanced.classes[id].kind),
                j_baseline: per_frame(&self.baseline, id)?,
                j_enhanced: per_frame(&self.enhanced, id)?,
            });
        }
        Ok(Summary {
            video_id: self.video.video_id.clone(),
            frame_count: self.frame_count(),
            baseline: score(&self.baseline)?,
            enhanced: score(&self.enhanced)?,
            objects,
            decisions: self.enhanced.decisions.iter().map(|d| d.to_string()).collect(),
        })
    }
}

fn to_box(v: &[u32]) -> Result<Option<BBox>, String> {
    match v {
        [] => Ok(None),
        [x0, y0, x1, y1] => BBox::new(*x0, *y0, *x1, *y1).map(Some).map_err(|e| e.to_string()),
        _ => Err(format!("a box needs 4 numbers, got {}", v.len())),
    }
}

/// Tracker gate on a `width` x `height` frame. An empty `sam_box` stands for
/// an empty baseline mask, an empty `aux_box` for a lost tracker.
pub fn gate(
    width: u32,
    height: u32,
    sam_box: &[u32],
    aux_box: &[u32],
    confidence: f64,
    iou_threshold: f64,
    confidence_threshold: f64,
) -> Result<FusionDecision, String> {
    let d = Dims::new(width, height);
    let sam = match to_box(sam_box)? {
        Some(b) if b.x1() <= width && b.y1() <= height => Mask::from_bbox(d, &b),
        Some(b) => return Err(format!("box {:?} leaves the {width}x{height} frame", b.to_array())),
        None => Mask::empty(d),
    };
    let aux = TrackOutput::new(to_box(aux_box)?, confidence).map_err(|e| e.to_string())?;
    let cfg = FusionConfig {
        iou_threshold,
        confidence_threshold,
        ..FusionConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(fuse_tiny(&sam, &aux, &cfg))
}

fn js_err(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = Demo)]
pub struct WebDemo(Demo);

#[wasm_bindgen(js_class = Demo)]
impl WebDemo {
    /// Generates video `index` of a seeded suite and runs both pipelines.
    #[wasm_bindgen(constructor)]
    pub fn new(suite: &str, seed: u32, index: usize) -> Result<WebDemo, JsError> {
        Demo::new(suite, u64::from(seed), index).map(WebDemo).map_err(js_err)
    }

    pub fn width(&self) -> u32 {
        self.0.dims().width
    }

    pub fn height(&self) -> u32 {
        self.0.dims().height
    }

    #[wasm_bindgen(js_name = frameCount)]
    pub fn frame_count(&self) -> usize {
        self.0.frame_count()
    }

    /// RGBA bytes for a canvas `ImageData`.
    pub fn render(&self, t: usize, ground_truth: bool, baseline: bool, enhanced: bool) -> Vec<u8> {
        self.0.render(
            t,
            Layers {
                ground_truth,
                baseline,
                enhanced,
            },
        )
    }

    #[wasm_bindgen(js_name = setThresholds)]
    pub fn set_thresholds(&mut self, iou_threshold: f64, confidence_threshold: f64) -> Result<(), JsError> {
        self.0.set_thresholds(iou_threshold, confidence_threshold).map_err(js_err)
    }

    /// Scores, per-frame J and the decision log, as JSON.
    pub fn summary(&self) -> Result<String, JsError> {
        let s = self.0.summary().map_err(js_err)?;
        serde_json::to_string(&s).map_err(|e| js_err(e.to_string()))
    }
}

/// Gate decision as JSON; see [`gate`].
#[wasm_bindgen(js_name = fusionGate)]
pub fn fusion_gate(
    width: u32,
    height: u32,
    sam_box: Vec<u32>,
    aux_box: Vec<u32>,
    confidence: f64,
    iou_threshold: f64,
    confidence_threshold: f64,
) -> Result<String, JsError> {
    let d = gate(width, height, &sam_box, &aux_box, confidence, iou_threshold, confidence_threshold).map_err(js_err)?;
    serde_json::to_string(&d).map_err(|e| js_err(e.to_string()))
}
