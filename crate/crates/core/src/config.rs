//! Run configuration. Field names double as the keys of the config file's
//! `[fusion]`, `[pipeline]` and `[protocol]` sections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    /// Box IoU at or above which the baseline is trusted.
    pub iou_threshold: f64,
    /// Tracker confidence below which an auxiliary box is discarded.
    pub confidence_threshold: f64,
    /// First-frame area ratio under which a target counts as tiny.
    pub tiny_area_ratio: f64,
    pub judge_crop_pad: u32,
    /// Gate stride in frames.
    pub evaluate_every: usize,
    pub f_dot_tolerance: u32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            confidence_threshold: 0.5,
            tiny_area_ratio: 0.001,
            judge_crop_pad: 8,
            evaluate_every: 1,
            f_dot_tolerance: 1,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("iou_threshold", self.iou_threshold),
            ("confidence_threshold", self.confidence_threshold),
            ("tiny_area_ratio", self.tiny_area_ratio),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("fusion.{name} = {v} is outside [0, 1]")));
            }
        }
        if self.evaluate_every == 0 {
            return Err(Error::Config("fusion.evaluate_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn metrics(&self) -> MetricsConfig {
        MetricsConfig {
            f_dot_tolerance: self.f_dot_tolerance,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineOptions {
    /// Re-propagate the frame on which a corrective prompt was injected.
    pub apply_same_frame: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            apply_same_frame: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolOptions {
    pub timeout_ms: u64,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub fusion: FusionConfig,
    pub pipeline: PipelineOptions,
    pub protocol: ProtocolOptions,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()
    }

    /// `(section, key, default value)` for every key, in file order.
    pub fn default_entries() -> Vec<(&'static str, String, String)> {
        let defaults = serde_json::to_value(Config::default()).expect("serializable");
        let mut out = Vec::new();
        for section in ["fusion", "pipeline", "protocol"] {
            let table = defaults[section].as_object().expect("section is a table");
            for key in Self::keys(section) {
                out.push((section, key.to_string(), table[*key].to_string()));
            }
        }
        out
    }

    fn keys(section: &str) -> &'static [&'static str] {
        match section {
            "fusion" => &[
                "iou_threshold",
                "confidence_threshold",
                "tiny_area_ratio",
                "judge_crop_pad",
                "evaluate_every",
                "f_dot_tolerance",
            ],
            "pipeline" => &["apply_same_frame"],
            "protocol" => &["timeout_ms"],
            _ => &[],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_listed() {
        Config::default().validate().unwrap();
        let entries = Config::default_entries();
        assert_eq!(entries.len(), 8);
        assert_eq!(entries[0], ("fusion", "iou_threshold".into(), "0.5".into()));
        assert!(entries.contains(&("protocol", "timeout_ms".into(), "30000".into())));
    }

    #[test]
    fn rejects_out_of_range() {
        let mut c = Config::default();
        c.fusion.iou_threshold = 1.5;
        assert!(c.validate().is_err());
        let mut c = Config::default();
        c.fusion.evaluate_every = 0;
        assert!(c.validate().is_err());
    }
}
