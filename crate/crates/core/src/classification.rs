//! Routes each annotated object to the regular, tiny or semantic path.
//!
//! The area test runs first: a target is tiny when its first-frame mask
//! covers less than `tiny_area_ratio` of the frame, regardless of what the
//! semantic oracle would say. Otherwise the oracle decides whether the target
//! carries an attribute that separates it from look-alikes.

use serde::{Deserialize, Serialize};

use crate::backends::{FrameRef, Judge};
use crate::config::FusionConfig;
use crate::error::{Error, Result};
use crate::geometry::{mask_area, Dims, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    Regular,
    Tiny,
    SemanticDominated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetClass {
    pub kind: TargetKind,
    pub area_ratio: f64,
    /// Oracle answer; absent when the area test decided.
    pub semantic_verdict: Option<bool>,
    pub description: Option<String>,
}

impl TargetClass {
    pub fn regular(area_ratio: f64) -> Self {
        Self {
            kind: TargetKind::Regular,
            area_ratio,
            semantic_verdict: None,
            description: None,
        }
    }
}

pub fn area_ratio(mask: &Mask, frame: Dims) -> f64 {
    mask_area(mask) as f64 / frame.area() as f64
}

pub fn classify_target(
    first_mask: &Mask,
    frame: &FrameRef,
    dims: Dims,
    cfg: &FusionConfig,
    oracle: &mut dyn Judge,
) -> Result<TargetClass> {
    if first_mask.is_empty() {
        return Err(Error::EmptyAnnotation);
    }
    let ratio = area_ratio(first_mask, dims);
    if ratio < cfg.tiny_area_ratio {
        return Ok(TargetClass {
            kind: TargetKind::Tiny,
            area_ratio: ratio,
            semantic_verdict: None,
            description: None,
        });
    }
    let verdict = oracle.classify_semantic(frame, first_mask)?;
    Ok(TargetClass {
        kind: if verdict.distinct {
            TargetKind::SemanticDominated
        } else {
            TargetKind::Regular
        },
        area_ratio: ratio,
        semantic_verdict: Some(verdict.distinct),
        description: verdict.description,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{Crop, JudgeVerdict, SemanticVerdict};

    struct Fixed {
        answer: Option<SemanticVerdict>,
        calls: usize,
    }

    impl Judge for Fixed {
        fn classify_semantic(&mut self, _: &FrameRef, _: &Mask) -> Result<SemanticVerdict> {
            self.calls += 1;
            self.answer
                .clone()
                .ok_or_else(|| Error::BackendUnavailable("judge down".into()))
        }

        fn compare(&mut self, _: &Crop, _: &Crop, _: &Crop) -> Result<JudgeVerdict> {
            unreachable!()
        }
    }

    fn distinct(text: &str) -> Fixed {
        Fixed {
            answer: Some(SemanticVerdict {
                distinct: true,
                description: Some(text.into()),
            }),
            calls: 0,
        }
    }

    fn dims() -> Dims {
        Dims::new(100, 100)
    }

    fn frame() -> FrameRef {
        FrameRef::new("v", 0)
    }

    #[test]
    fn five_pixels_is_tiny_even_with_a_yes_oracle() {
        let m = Mask::from_fn(dims(), |x, y| y == 0 && x < 5);
        let mut oracle = distinct("anything");
        let c = classify_target(&m, &frame(), dims(), &FusionConfig::default(), &mut oracle).unwrap();
        assert_eq!(c.kind, TargetKind::Tiny);
        assert_eq!(c.area_ratio, 0.0005);
        assert_eq!(oracle.calls, 0);
    }

    #[test]
    fn distinct_attributes_make_semantic_target() {
        let m = Mask::from_fn(dims(), |x, y| x < 20 && y < 20);
        let mut oracle = distinct("red jersey number 9");
        let c = classify_target(&m, &frame(), dims(), &FusionConfig::default(), &mut oracle).unwrap();
        assert_eq!(c.kind, TargetKind::SemanticDominated);
        assert_eq!(c.description.as_deref(), Some("red jersey number 9"));
    }

    #[test]
    fn no_attributes_make_regular_target() {
        let m = Mask::from_fn(dims(), |x, y| x < 20 && y < 20);
        let mut oracle = Fixed {
            answer: Some(SemanticVerdict {
                distinct: false,
                description: None,
            }),
            calls: 0,
        };
        let c = classify_target(&m, &frame(), dims(), &FusionConfig::default(), &mut oracle).unwrap();
        assert_eq!(c.kind, TargetKind::Regular);
        assert_eq!(c.semantic_verdict, Some(false));
    }

    #[test]
    fn errors() {
        let mut oracle = Fixed { answer: None, calls: 0 };
        let cfg = FusionConfig::default();
        assert!(matches!(
            classify_target(&Mask::empty(dims()), &frame(), dims(), &cfg, &mut oracle),
            Err(Error::EmptyAnnotation)
        ));
        let m = Mask::from_fn(dims(), |x, y| x < 20 && y < 20);
        assert!(matches!(
            classify_target(&m, &frame(), dims(), &cfg, &mut oracle),
            Err(Error::BackendUnavailable(_))
        ));
    }

    #[test]
    fn threshold_boundary_is_not_tiny() {
        // exactly 0.001 of the frame: 10 pixels of 10000
        let m = Mask::from_fn(dims(), |x, y| y == 0 && x < 10);
        let mut oracle = distinct("logo");
        let c = classify_target(&m, &frame(), dims(), &FusionConfig::default(), &mut oracle).unwrap();
        assert_eq!(c.kind, TargetKind::SemanticDominated);
    }
}
