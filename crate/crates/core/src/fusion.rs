//! Per-frame gate deciding whether an auxiliary box replaces the segmenter's
//! own localisation.
//!
//! Both paths first compare the box around the segmenter's mask with the
//! auxiliary box. At or above `iou_threshold` the baseline is kept and
//! nothing else is consulted. Below it, the tracker path trusts the box only
//! at sufficient confidence, and the detector path asks the judge which crop
//! looks more like the first-frame reference.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backends::{Crop, FrameRef, Judge, JudgeChoice, TrackOutput};
use crate::config::FusionConfig;
use crate::geometry::{bbox_iou, crop, mask_to_bbox, BBox, Dims, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionAction {
    KeepBaseline,
    InjectAuxiliary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionReason {
    IoUAboveThreshold,
    AuxMissing,
    LowConfidence,
    HighConfidenceInject,
    JudgeChoseBaseline,
    JudgeChoseAuxiliary,
    /// The segmenter lost the target entirely, so there is no baseline crop.
    BaselineEmpty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionDecision {
    pub action: FusionAction,
    /// The injected box, or the baseline's own box when kept.
    pub chosen_bbox: Option<BBox>,
    pub iou_observed: Option<f64>,
    pub reason: FusionReason,
}

impl FusionDecision {
    fn keep(baseline: Option<BBox>, iou: Option<f64>, reason: FusionReason) -> Self {
        Self {
            action: FusionAction::KeepBaseline,
            chosen_bbox: baseline,
            iou_observed: iou,
            reason,
        }
    }

    fn inject(aux: BBox, iou: Option<f64>, reason: FusionReason) -> Self {
        Self {
            action: FusionAction::InjectAuxiliary,
            chosen_bbox: Some(aux),
            iou_observed: iou,
            reason,
        }
    }
}

impl fmt::Display for FusionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl fmt::Display for FusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// IoU between the baseline box and the auxiliary box; 0 without a baseline.
fn gate_iou(baseline: Option<&BBox>, aux: &BBox) -> f64 {
    baseline.map_or(0.0, |b| bbox_iou(b, aux))
}

/// Gate for tracker boxes.
pub fn fuse_tiny(sam_mask: &Mask, aux: &TrackOutput, cfg: &FusionConfig) -> FusionDecision {
    let baseline = mask_to_bbox(sam_mask);
    let Some(aux_box) = aux.bbox() else {
        return FusionDecision::keep(baseline, None, FusionReason::AuxMissing);
    };
    let iou = gate_iou(baseline.as_ref(), &aux_box);
    if iou >= cfg.iou_threshold {
        FusionDecision::keep(baseline, Some(iou), FusionReason::IoUAboveThreshold)
    } else if aux.confidence() < cfg.confidence_threshold {
        FusionDecision::keep(baseline, Some(iou), FusionReason::LowConfidence)
    } else {
        FusionDecision::inject(aux_box, Some(iou), FusionReason::HighConfidenceInject)
    }
}

/// Gate for detector boxes, arbitrated by the judge. A failing judge keeps
/// the baseline as if no auxiliary box had arrived.
pub fn fuse_semantic(
    sam_mask: &Mask,
    det: &TrackOutput,
    reference: &Crop,
    frame: &FrameRef,
    judge: &mut dyn Judge,
    cfg: &FusionConfig,
) -> FusionDecision {
    let baseline = mask_to_bbox(sam_mask);
    let Some(det_box) = det.bbox() else {
        return FusionDecision::keep(baseline, None, FusionReason::AuxMissing);
    };
    let Some(sam_box) = baseline else {
        return FusionDecision::inject(det_box, Some(0.0), FusionReason::BaselineEmpty);
    };
    let iou = bbox_iou(&sam_box, &det_box);
    if iou >= cfg.iou_threshold {
        return FusionDecision::keep(baseline, Some(iou), FusionReason::IoUAboveThreshold);
    }
    let dims = Dims::new(sam_mask.width(), sam_mask.height());
    let crop_of = |b: &BBox| Crop {
        frame: frame.clone(),
        bbox: crop(dims, b, cfg.judge_crop_pad),
    };
    match judge.compare(reference, &crop_of(&sam_box), &crop_of(&det_box)) {
        Ok(v) if v.choice == JudgeChoice::AuxiliaryCrop => {
            FusionDecision::inject(det_box, Some(iou), FusionReason::JudgeChoseAuxiliary)
        }
        Ok(_) => FusionDecision::keep(baseline, Some(iou), FusionReason::JudgeChoseBaseline),
        Err(_) => FusionDecision::keep(baseline, Some(iou), FusionReason::AuxMissing),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{JudgeVerdict, SemanticVerdict};
    use crate::error::{Error, Result};

    fn dims() -> Dims {
        Dims::new(40, 40)
    }

    fn bx(x0: u32, y0: u32, x1: u32, y1: u32) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    struct Scripted(Result<JudgeChoice>, usize);

    impl Judge for Scripted {
        fn classify_semantic(&mut self, _: &FrameRef, _: &Mask) -> Result<SemanticVerdict> {
            unreachable!()
        }

        fn compare(&mut self, _: &Crop, _: &Crop, _: &Crop) -> Result<JudgeVerdict> {
            self.1 += 1;
            match &self.0 {
                Ok(choice) => Ok(JudgeVerdict {
                    choice: *choice,
                    rationale: String::new(),
                }),
                Err(_) => Err(Error::BackendTimeout(10)),
            }
        }
    }

    #[test]
    fn tiny_same_box_keeps() {
        let b = bx(5, 5, 10, 10);
        let m = Mask::from_bbox(dims(), &b);
        for conf in [0.0, 0.3, 1.0] {
            let out = TrackOutput::new(Some(b), conf).unwrap();
            let d = fuse_tiny(&m, &out, &FusionConfig::default());
            assert_eq!(d.action, FusionAction::KeepBaseline);
            assert_eq!(d.reason, FusionReason::IoUAboveThreshold);
            assert_eq!(d.iou_observed, Some(1.0));
        }
    }

    #[test]
    fn tiny_low_iou_depends_on_confidence() {
        // 10x10 boxes offset by 6 columns: IoU 40/160 = 0.25
        let m = Mask::from_bbox(dims(), &bx(0, 0, 10, 10));
        let aux = bx(6, 0, 16, 10);
        let cfg = FusionConfig::default();
        let d = fuse_tiny(&m, &TrackOutput::found(aux, 0.9), &cfg);
        assert_eq!(d.action, FusionAction::InjectAuxiliary);
        assert_eq!(d.reason, FusionReason::HighConfidenceInject);
        assert_eq!(d.chosen_bbox, Some(aux));
        assert_eq!(d.iou_observed, Some(0.25));
        let d = fuse_tiny(&m, &TrackOutput::found(aux, 0.1), &cfg);
        assert_eq!(d.action, FusionAction::KeepBaseline);
        assert_eq!(d.reason, FusionReason::LowConfidence);
    }

    #[test]
    fn tiny_missing_aux_and_empty_mask() {
        let cfg = FusionConfig::default();
        let d = fuse_tiny(&Mask::empty(dims()), &TrackOutput::missing(), &cfg);
        assert_eq!(d.reason, FusionReason::AuxMissing);
        let d = fuse_tiny(&Mask::empty(dims()), &TrackOutput::found(bx(1, 1, 3, 3), 0.8), &cfg);
        assert_eq!(d.reason, FusionReason::HighConfidenceInject);
        assert_eq!(d.iou_observed, Some(0.0));
    }

    #[test]
    fn semantic_judge_paths() {
        let m = Mask::from_bbox(dims(), &bx(0, 0, 10, 10));
        let det = TrackOutput::found(bx(20, 20, 30, 30), 1.0);
        let reference = Crop {
            frame: FrameRef::new("v", 0),
            bbox: bx(0, 0, 10, 10),
        };
        let frame = FrameRef::new("v", 4);
        let cfg = FusionConfig::default();
        let mut aux = Scripted(Ok(JudgeChoice::AuxiliaryCrop), 0);
        let d = fuse_semantic(&m, &det, &reference, &frame, &mut aux, &cfg);
        assert_eq!((d.action, d.reason), (FusionAction::InjectAuxiliary, FusionReason::JudgeChoseAuxiliary));
        let mut base = Scripted(Ok(JudgeChoice::BaselineCrop), 0);
        let d = fuse_semantic(&m, &det, &reference, &frame, &mut base, &cfg);
        assert_eq!((d.action, d.reason), (FusionAction::KeepBaseline, FusionReason::JudgeChoseBaseline));
        let mut down = Scripted(Err(Error::BackendTimeout(1)), 0);
        let d = fuse_semantic(&m, &det, &reference, &frame, &mut down, &cfg);
        assert_eq!((d.action, d.reason), (FusionAction::KeepBaseline, FusionReason::AuxMissing));
    }

    #[test]
    fn semantic_empty_baseline_injects_without_judge() {
        let det = TrackOutput::found(bx(20, 20, 30, 30), 1.0);
        let reference = Crop {
            frame: FrameRef::new("v", 0),
            bbox: bx(0, 0, 10, 10),
        };
        let mut judge = Scripted(Ok(JudgeChoice::BaselineCrop), 0);
        let d = fuse_semantic(
            &Mask::empty(dims()),
            &det,
            &reference,
            &FrameRef::new("v", 3),
            &mut judge,
            &FusionConfig::default(),
        );
        assert_eq!(d.action, FusionAction::InjectAuxiliary);
        assert_eq!(d.reason, FusionReason::BaselineEmpty);
        assert_eq!(judge.1, 0);
    }
}
