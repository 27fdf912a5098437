//! Manifest format and on-disk layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<video_id>/scenario.json
//! <root>/<video_id>/frames/<t>.lbl
//! <root>/<video_id>/gt/<object_id>/<t>.rle
//! <out>/<video_id>/<object_id>/<t>.rle        predictions
//! ```
//! Frame files are named by zero-padded index, e.g. `00012.rle`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Dims, Mask};
use crate::metrics::ObjectSequences;
use crate::simulator::{LabelGrid, ScenarioSpec, SyntheticVideo};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub object_id: String,
    pub first_frame_index: usize,
    pub first_mask: Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub frame_count: usize,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<ObjectEntry>,
    /// Ground-truth directory relative to the dataset root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_path: Option<String>,
}

impl VideoEntry {
    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::ManifestError(format!("video {}: {m}", self.video_id)));
        if self.frame_count == 0 || self.width == 0 || self.height == 0 {
            return err("empty video".into());
        }
        let mut seen = BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(&o.object_id) {
                return err(format!("duplicate object id {}", o.object_id));
            }
            if o.first_frame_index >= self.frame_count {
                return err(format!("object {} starts after the last frame", o.object_id));
            }
            if o.first_mask.dims() != self.dims() {
                return err(format!("object {} mask has wrong size", o.object_id));
            }
            if o.first_mask.is_empty() {
                return err(format!("object {} has an empty first mask", o.object_id));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Dataset root, relative to the manifest's directory.
    pub dataset_root: String,
    pub videos: Vec<VideoEntry>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.videos.is_empty() {
            return Err(Error::ManifestError("manifest lists no videos".into()));
        }
        let mut seen = BTreeSet::new();
        for v in &self.videos {
            if !seen.insert(&v.video_id) {
                return Err(Error::ManifestError(format!("duplicate video id {}", v.video_id)));
            }
            v.validate()?;
        }
        Ok(())
    }
}

/// A manifest together with its resolved dataset root.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path)
            .map_err(|e| Error::io(format!("reading {}", manifest_path.display()), e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::ManifestError(format!("{}: {e}", manifest_path.display())))?;
        manifest.validate()?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let root = base.join(&manifest.dataset_root);
        Ok(Self { manifest, root })
    }

    pub fn video_dir(&self, video_id: &str) -> PathBuf {
        self.root.join(video_id)
    }

    /// Ground truth for a video, or `None` when the manifest gives no path.
    pub fn load_gt(&self, video: &VideoEntry) -> Result<Option<ObjectSequences>> {
        let Some(gt) = &video.gt_path else {
            return Ok(None);
        };
        read_object_sequences(&self.root.join(gt), video).map(Some)
    }

    pub fn load_frames(&self, video_id: &str) -> Result<(ScenarioSpec, Vec<LabelGrid>)> {
        load_label_video(&self.video_dir(video_id))
    }
}

pub fn frame_file_name(t: usize, ext: &str) -> String {
    format!("{t:05}.{ext}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

pub fn write_mask_sequence(dir: &Path, masks: &[Mask]) -> Result<()> {
    for (t, m) in masks.iter().enumerate() {
        let mut line = m.to_rle_string();
        line.push('\n');
        write_file(&dir.join(frame_file_name(t, "rle")), &line)?;
    }
    Ok(())
}

pub fn read_mask_sequence(dir: &Path, frames: usize, dims: Dims) -> Result<Vec<Mask>> {
    (0..frames)
        .map(|t| {
            let path = dir.join(frame_file_name(t, "rle"));
            let mask: Mask = read_file(&path)?
                .trim()
                .parse()
                .map_err(|e| Error::ManifestError(format!("{}: {e}", path.display())))?;
            if mask.dims() != dims {
                return Err(Error::DimensionMismatch {
                    left_w: mask.width(),
                    left_h: mask.height(),
                    right_w: dims.width,
                    right_h: dims.height,
                });
            }
            Ok(mask)
        })
        .collect()
}

/// Reads `<dir>/<object_id>/<t>.rle` for every object of `video`.
pub fn read_object_sequences(dir: &Path, video: &VideoEntry) -> Result<ObjectSequences> {
    video
        .objects
        .iter()
        .map(|o| {
            let seq = read_mask_sequence(&dir.join(&o.object_id), video.frame_count, video.dims())?;
            Ok((o.object_id.clone(), seq))
        })
        .collect()
}

/// Object ids that have a directory under `dir`.
pub fn list_object_dirs(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut out = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        if entry.path().is_dir() {
            out.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(out)
}

pub fn write_object_sequences(dir: &Path, seqs: &ObjectSequences) -> Result<()> {
    for (id, seq) in seqs {
        write_mask_sequence(&dir.join(id), seq)?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_file(path)?)
        .map_err(|e| Error::ManifestError(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text)
}

/// Writes scenario, label frames and ground truth of one synthetic video.
pub fn write_synthetic_video(root: &Path, video: &SyntheticVideo) -> Result<()> {
    let dir = root.join(&video.video_id);
    write_json(&dir.join("scenario.json"), &video.spec)?;
    for (t, grid) in video.frames.iter().enumerate() {
        let mut line = grid.to_string();
        line.push('\n');
        write_file(&dir.join("frames").join(frame_file_name(t, "lbl")), &line)?;
    }
    write_object_sequences(&dir.join("gt"), &video.gt)
}

pub fn load_label_video(dir: &Path) -> Result<(ScenarioSpec, Vec<LabelGrid>)> {
    let spec: ScenarioSpec = read_json(&dir.join("scenario.json"))?;
    let frames = (0..spec.num_frames)
        .map(|t| {
            let path = dir.join("frames").join(frame_file_name(t, "lbl"));
            read_file(&path)?.trim().parse::<LabelGrid>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((spec, frames))
}

/// Writes a set of synthetic videos and their manifest under `root`.
pub fn write_synthetic_dataset(root: &Path, videos: &[SyntheticVideo]) -> Result<PathBuf> {
    for v in videos {
        write_synthetic_video(root, v)?;
    }
    let manifest = Manifest {
        dataset_root: ".".into(),
        videos: videos.iter().map(|v| v.manifest_entry.clone()).collect(),
    };
    let path = root.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}
