//! Region similarity (J), boundary F-measure (F and the fixed-tolerance Ḟ),
//! disappearance/reappearance phase labelling and report aggregation.
//!
//! Frame accounting:
//! - frames before the object's first ground-truth appearance are skipped
//!   unless the prediction is nonempty there (a false positive scores 0);
//! - a frame where both masks are empty scores J = F = 1;
//! - sequence scores are means over counted frames, dataset scores are means
//!   over objects.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{boundary_pixels, mask_iou, Dims, Mask, Pixel};

/// Where a frame sits relative to the object's presence history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    BeforeFirstAppearance,
    Visible,
    Disappeared,
    Reappeared,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameStatus {
    pub frame_index: usize,
    pub gt_present: bool,
    pub phase: Phase,
}

/// Labels each frame from a presence sequence.
pub fn classify_presence(present: &[bool]) -> Vec<FrameStatus> {
    let mut seen = false;
    let mut lost_once = false;
    present
        .iter()
        .enumerate()
        .map(|(frame_index, &gt_present)| {
            let phase = match (gt_present, seen) {
                (false, false) => Phase::BeforeFirstAppearance,
                (false, true) => {
                    lost_once = true;
                    Phase::Disappeared
                }
                (true, _) if lost_once => Phase::Reappeared,
                (true, _) => {
                    seen = true;
                    Phase::Visible
                }
            };
            FrameStatus {
                frame_index,
                gt_present,
                phase,
            }
        })
        .collect()
}

pub fn classify_phases(gt: &[Mask]) -> Vec<FrameStatus> {
    let present: Vec<bool> = gt.iter().map(|m| !m.is_empty()).collect();
    classify_presence(&present)
}

/// Tolerance used by F: ceil(0.8% of the frame diagonal), computed exactly
/// as the least `t` with `15625 t² >= w² + h²`.
pub fn diagonal_tolerance(dims: Dims) -> u32 {
    let diag2 = u64::from(dims.width).pow(2) + u64::from(dims.height).pow(2);
    let mut t = ((diag2 as f64).sqrt() / 125.0).floor() as u64;
    while 15625 * t * t < diag2 {
        t += 1;
    }
    while t > 0 && 15625 * (t - 1) * (t - 1) >= diag2 {
        t -= 1;
    }
    t as u32
}

fn check_dims(pred: &Mask, gt: &Mask) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            left_w: pred.width(),
            left_h: pred.height(),
            right_w: gt.width(),
            right_h: gt.height(),
        });
    }
    Ok(())
}

/// Counts pixels in `from` that lie within Euclidean distance `tolerance`
/// of some pixel in `to`.
fn matched_count(from: &[Pixel], to: &[Pixel], dims: Dims, tolerance: u32) -> usize {
    if to.is_empty() {
        return 0;
    }
    let (w, h) = (i64::from(dims.width), i64::from(dims.height));
    let tol = i64::from(tolerance).min(w + h);
    let tol2 = tol * tol;
    let mut grid = vec![false; dims.area() as usize];
    for p in to {
        grid[(p.y as usize) * (w as usize) + p.x as usize] = true;
    }
    let offsets: Vec<(i64, i64)> = (-tol..=tol)
        .flat_map(|dy| (-tol..=tol).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= tol2)
        .collect();
    from.iter()
        .filter(|p| {
            offsets.iter().any(|(dx, dy)| {
                let x = i64::from(p.x) + dx;
                let y = i64::from(p.y) + dy;
                x >= 0 && y >= 0 && x < w && y < h && grid[(y * w + x) as usize]
            })
        })
        .count()
}

/// Boundary F-measure with a Euclidean matching tolerance in pixels.
pub fn boundary_f(pred: &Mask, gt: &Mask, tolerance: u32) -> Result<f64> {
    check_dims(pred, gt)?;
    let pb = boundary_pixels(pred);
    let gb = boundary_pixels(gt);
    match (pb.is_empty(), gb.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let dims = pred.dims();
    let precision = matched_count(&pb, &gb, dims, tolerance) as f64 / pb.len() as f64;
    let recall = matched_count(&gb, &pb, dims, tolerance) as f64 / gb.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

fn check_sequences(pred: &[Mask], gt: &[Mask]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    pred.iter().zip(gt).try_for_each(|(p, g)| check_dims(p, g))
}

fn counted(phase: Phase, pred: &Mask) -> bool {
    phase != Phase::BeforeFirstAppearance || !pred.is_empty()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionSimilarity {
    /// Mask IoU for every frame.
    pub per_frame: Vec<f64>,
    /// Whether the frame enters the sequence mean.
    pub counted: Vec<bool>,
    pub mean: f64,
}

/// Per-frame J and the sequence mean over counted frames. A sequence with no
/// counted frame (object never present, never predicted) scores 1.
pub fn region_similarity(pred: &[Mask], gt: &[Mask]) -> Result<RegionSimilarity> {
    check_sequences(pred, gt)?;
    let phases = classify_phases(gt);
    let per_frame = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| mask_iou(p, g))
        .collect::<Result<Vec<_>>>()?;
    let counted: Vec<bool> = phases.iter().zip(pred).map(|(s, p)| counted(s.phase, p)).collect();
    let mean = mean_where(&per_frame, &counted).unwrap_or(1.0);
    Ok(RegionSimilarity {
        per_frame,
        counted,
        mean,
    })
}

fn mean_where(values: &[f64], keep: &[bool]) -> Option<f64> {
    let (sum, n) = values
        .iter()
        .zip(keep)
        .filter(|(_, k)| **k)
        .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Absolute tolerance in pixels for Ḟ.
    pub f_dot_tolerance: u32,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { f_dot_tolerance: 1 }
    }
}

/// Scores of one frame of one object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameScore {
    pub phase: Phase,
    pub counted: bool,
    pub j: f64,
    pub f: f64,
    pub f_dot: f64,
}

impl FrameScore {
    pub fn jf_dot(&self) -> f64 {
        (self.j + self.f_dot) / 2.0
    }
}

pub fn score_frames(pred: &[Mask], gt: &[Mask], cfg: &MetricsConfig) -> Result<Vec<FrameScore>> {
    check_sequences(pred, gt)?;
    let phases = classify_phases(gt);
    pred.iter()
        .zip(gt)
        .zip(phases)
        .map(|((p, g), status)| {
            let tol = diagonal_tolerance(g.dims());
            Ok(FrameScore {
                phase: status.phase,
                counted: counted(status.phase, p),
                j: mask_iou(p, g)?,
                f: boundary_f(p, g, tol)?,
                f_dot: boundary_f(p, g, cfg.f_dot_tolerance)?,
            })
        })
        .collect()
}

/// Mean (J + Ḟ)/2 over frames in `phase`, if any.
pub fn phase_jf(frames: &[FrameScore], phase: Phase) -> Option<f64> {
    let vals: Vec<f64> = frames
        .iter()
        .filter(|s| s.phase == phase)
        .map(FrameScore::jf_dot)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// The seven benchmark columns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub jf_dot: f64,
    pub j: f64,
    pub f_dot: f64,
    pub jf_disappear: Option<f64>,
    pub jf_reappear: Option<f64>,
    pub f: f64,
    pub jf: f64,
}

impl Scores {
    pub fn from_frames(frames: &[FrameScore]) -> Self {
        let keep: Vec<bool> = frames.iter().map(|s| s.counted).collect();
        let col = |get: fn(&FrameScore) -> f64| {
            let vals: Vec<f64> = frames.iter().map(get).collect();
            mean_where(&vals, &keep).unwrap_or(1.0)
        };
        let j = col(|s| s.j);
        let f = col(|s| s.f);
        let f_dot = col(|s| s.f_dot);
        Self {
            jf_dot: (j + f_dot) / 2.0,
            j,
            f_dot,
            jf_disappear: phase_jf(frames, Phase::Disappeared),
            jf_reappear: phase_jf(frames, Phase::Reappeared),
            f,
            jf: (j + f) / 2.0,
        }
    }

    /// Column-wise mean; optional columns average over the inputs that have them.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Scores>) -> Option<Scores> {
        let items: Vec<&Scores> = items.into_iter().collect();
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let avg = |get: fn(&Scores) -> f64| items.iter().map(|s| get(s)).sum::<f64>() / n;
        let avg_opt = |get: fn(&Scores) -> Option<f64>| {
            let vals: Vec<f64> = items.iter().filter_map(|s| get(s)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let j = avg(|s| s.j);
        let f = avg(|s| s.f);
        let f_dot = avg(|s| s.f_dot);
        Some(Scores {
            jf_dot: (j + f_dot) / 2.0,
            j,
            f_dot,
            jf_disappear: avg_opt(|s| s.jf_disappear),
            jf_reappear: avg_opt(|s| s.jf_reappear),
            f,
            jf: (j + f) / 2.0,
        })
    }

    /// Values in column order, as fractions.
    pub fn columns(&self) -> [Option<f64>; 7] {
        [
            Some(self.jf_dot),
            Some(self.j),
            Some(self.f_dot),
            self.jf_disappear,
            self.jf_reappear,
            Some(self.f),
            Some(self.jf),
        ]
    }

    /// Percentages with two decimals, `-` for absent columns.
    pub fn formatted(&self) -> [String; 7] {
        self.columns().map(format_percent)
    }
}

pub const COLUMN_NAMES: [&str; 7] = [
    "J&Ḟ",
    "J",
    "Ḟ",
    "J&Ḟ_disappear",
    "J&Ḟ_reappear",
    "F",
    "J&F",
];

pub fn format_percent(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "-".to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub object_id: String,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub scores: Scores,
    pub per_object: Vec<ObjectReport>,
}

impl EvalReport {
    /// Flat `name value` table, one column per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, value) in COLUMN_NAMES.iter().zip(self.scores.formatted()) {
            let _ = writeln!(out, "{name:<16}{value}");
        }
        out
    }
}

/// Per-object mask sequences keyed by object id.
pub type ObjectSequences = BTreeMap<String, Vec<Mask>>;

pub fn evaluate(pred: &ObjectSequences, gt: &ObjectSequences, cfg: &MetricsConfig) -> Result<EvalReport> {
    if pred.keys().ne(gt.keys()) {
        let p: Vec<&String> = pred.keys().collect();
        let g: Vec<&String> = gt.keys().collect();
        return Err(Error::ObjectSetMismatch(format!(
            "predicted {p:?}, ground truth {g:?}"
        )));
    }
    if gt.is_empty() {
        return Err(Error::ObjectSetMismatch("no objects".into()));
    }
    let per_object = gt
        .iter()
        .map(|(id, g)| {
            let frames = score_frames(&pred[id], g, cfg)?;
            Ok(ObjectReport {
                object_id: id.clone(),
                scores: Scores::from_frames(&frames),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = Scores::mean(per_object.iter().map(|o| &o.scores)).expect("nonempty");
    Ok(EvalReport { scores, per_object })
}
