//! Deterministic in-process backends driven by synthetic label grids.
//!
//! Every mock is a pure function of (scenario, profile, call history). The
//! oracle profiles reproduce ground truth exactly; the scenario profiles
//! replay the failure models stored on each actor:
//!
//! - segmenter: [`DriftModel`] (translation, shrink, loss after occlusion);
//! - tracker: seeded box jitter and confidence decay while the target is gone;
//! - detector: [`Confusion`] windows that report a look-alike instead;
//! - judge: per-frame scripted verdicts, falling back to the identity oracle.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Crop, Detector, FrameRef, Judge, JudgeChoice, JudgeVerdict, Role, Segmenter, SegmenterInit,
    SemanticVerdict, SessionId, TrackOutput, Tracker,
};
use crate::dataset::load_label_video;
use crate::error::{Error, Result};
use crate::geometry::{intersection_area, mask_area, mask_to_bbox, BBox, Dims, Mask};
use crate::simulator::{ActorSpec, Identity, LabelGrid, ScenarioSpec, SyntheticVideo};

/// Segmenter failure injected for one target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    /// First frame of drift; the mask at this frame is still exact.
    pub drift_start: usize,
    /// Pixels per frame the mask slides away from the target.
    pub drift_offset_per_frame: [i64; 2],
    /// Fraction of the box extent lost per drifting frame.
    #[serde(default)]
    pub shrink_per_frame: f64,
    /// Once the target vanishes, stay empty until re-prompted.
    #[serde(default)]
    pub occlusion_blindness: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerNoise {
    pub jitter_px: u32,
    pub confidence_decay: f64,
}

impl Default for TrackerNoise {
    fn default() -> Self {
        Self {
            jitter_px: 2,
            confidence_decay: 0.05,
        }
    }
}

/// Detector reports `actor` instead of the described target on frames
/// `start..=end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub start: usize,
    pub end: usize,
    pub actor: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeChoiceScript {
    Baseline,
    Auxiliary,
}

/// Whether a mock follows ground truth or replays the scenario's failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MockProfile {
    Oracle,
    Scenario,
}

impl MockProfile {
    /// Profile names accepted per role. `scenario` works for every role.
    pub fn for_role(role: Role, name: &str) -> Result<Self> {
        let faulty = match role {
            Role::Segmenter => "drift",
            Role::Tracker => "noisy",
            Role::Detector | Role::Judge => "scripted",
        };
        match name {
            "oracle" => Ok(MockProfile::Oracle),
            "scenario" => Ok(MockProfile::Scenario),
            n if n == faulty => Ok(MockProfile::Scenario),
            n => Err(Error::Config(format!(
                "unknown mock profile `{n}` for {} (valid: oracle, scenario, {faulty})",
                role.name()
            ))),
        }
    }
}

/// Scenario and label frames of one video, shared by its mocks.
#[derive(Debug)]
pub struct MockVideo {
    pub video_id: String,
    pub spec: ScenarioSpec,
    pub frames: Vec<LabelGrid>,
}

impl MockVideo {
    pub fn from_synthetic(v: &SyntheticVideo) -> Self {
        Self {
            video_id: v.video_id.clone(),
            spec: v.spec.clone(),
            frames: v.frames.clone(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.spec.dims()
    }

    fn frame(&self, t: usize) -> Result<&LabelGrid> {
        self.frames.get(t).ok_or_else(|| {
            Error::BackendUnavailable(format!("video {} has no frame {t}", self.video_id))
        })
    }

    /// Visible pixels of `actor` at frame `t`.
    pub fn actor_mask(&self, actor: u16, t: usize) -> Result<Mask> {
        Ok(self.frame(t)?.mask_of(actor))
    }

    /// Target or distractor covering most of `region` at frame `t`; ties go
    /// to the lower id.
    pub fn dominant_actor(&self, t: usize, region: &Mask) -> Result<Option<u16>> {
        let hist = self.frame(t)?.histogram_in(region);
        let best = hist
            .into_iter()
            .filter(|(label, _)| {
                self.spec
                    .actor(*label)
                    .is_some_and(|a| a.identity != Identity::Occluder)
            })
            .fold(None::<(u16, u64)>, |best, (label, n)| match best {
                Some((_, m)) if m >= n => best,
                _ => Some((label, n)),
            });
        Ok(best.map(|(label, _)| label))
    }

    fn dominant_in_box(&self, t: usize, b: &BBox) -> Result<Option<u16>> {
        self.dominant_actor(t, &Mask::from_bbox(self.dims(), b))
    }

    fn actor(&self, id: u16) -> Option<&ActorSpec> {
        self.spec.actor(id)
    }
}

/// Where mocks find the label grids of a video.
pub enum VideoSource {
    Memory(BTreeMap<String, Arc<MockVideo>>),
    Disk {
        root: PathBuf,
        cache: Mutex<HashMap<String, Arc<MockVideo>>>,
    },
}

impl VideoSource {
    pub fn memory(videos: &[SyntheticVideo]) -> Self {
        VideoSource::Memory(
            videos
                .iter()
                .map(|v| (v.video_id.clone(), Arc::new(MockVideo::from_synthetic(v))))
                .collect(),
        )
    }

    pub fn disk(root: impl Into<PathBuf>) -> Self {
        VideoSource::Disk {
            root: root.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn video(&self, video_id: &str) -> Result<Arc<MockVideo>> {
        let missing = || Error::BackendUnavailable(format!("no scenario data for video {video_id}"));
        match self {
            VideoSource::Memory(map) => map.get(video_id).cloned().ok_or_else(missing),
            VideoSource::Disk { root, cache } => {
                if let Some(v) = cache.lock().expect("cache lock").get(video_id) {
                    return Ok(v.clone());
                }
                let (spec, frames) = load_label_video(&root.join(video_id)).map_err(|e| {
                    Error::BackendUnavailable(format!("no scenario data for video {video_id}: {e}"))
                })?;
                let v = Arc::new(MockVideo {
                    video_id: video_id.to_string(),
                    spec,
                    frames,
                });
                cache
                    .lock()
                    .expect("cache lock")
                    .insert(video_id.to_string(), v.clone());
                Ok(v)
            }
        }
    }
}

#[derive(Debug)]
struct SegSession {
    anchor: Option<u16>,
    drift: Option<DriftModel>,
    drift_cancelled: bool,
    lost: bool,
    last_frame: usize,
    reprop_allowed: bool,
    last_prompt: Option<usize>,
}

/// Follows the anchored actor's visible pixels, optionally degraded by its
/// [`DriftModel`]. A box prompt cancels drift and re-anchors to the actor
/// covering most of the box (or to nothing).
pub struct MockSegmenter {
    video: Arc<MockVideo>,
    profile: MockProfile,
    sessions: BTreeMap<String, SegSession>,
}

impl MockSegmenter {
    pub fn new(video: Arc<MockVideo>, profile: MockProfile) -> Self {
        Self {
            video,
            profile,
            sessions: BTreeMap::new(),
        }
    }

    fn session(&mut self, id: &SessionId) -> Result<&mut SegSession> {
        self.sessions
            .get_mut(&id.0)
            .ok_or_else(|| Error::UnknownSession(id.0.clone()))
    }
}

/// Keeps the part of `m` inside its bounding box scaled by `scale` about the
/// box centre.
fn shrink_about_center(m: &Mask, scale: f64) -> Mask {
    let Some(b) = mask_to_bbox(m) else {
        return m.clone();
    };
    if scale <= 0.0 {
        return Mask::empty(m.dims());
    }
    let cx = f64::from(b.x0() + b.x1()) / 2.0;
    let cy = f64::from(b.y0() + b.y1()) / 2.0;
    let hw = f64::from(b.width()) / 2.0 * scale;
    let hh = f64::from(b.height()) / 2.0 * scale;
    let bits = m.to_bits();
    let w = m.width();
    Mask::from_fn(m.dims(), |x, y| {
        bits[(y * w + x) as usize]
            && (f64::from(x) + 0.5 - cx).abs() <= hw
            && (f64::from(y) + 0.5 - cy).abs() <= hh
    })
}

/// Mask produced by a drifting segmenter `k` frames after drift onset.
pub fn drifted_mask(gt: &Mask, drift: &DriftModel, k: usize) -> Mask {
    let k = k as i64;
    let moved = gt.translate(drift.drift_offset_per_frame[0] * k, drift.drift_offset_per_frame[1] * k);
    if drift.shrink_per_frame > 0.0 {
        shrink_about_center(&moved, 1.0 - drift.shrink_per_frame * k as f64)
    } else {
        moved
    }
}

impl Segmenter for MockSegmenter {
    fn init(&mut self, init: &SegmenterInit) -> Result<SessionId> {
        if init.first_mask.is_empty() {
            return Err(Error::EmptyAnnotation);
        }
        let sid = format!("{}/{}", init.video_id, init.object_id);
        if self.sessions.contains_key(&sid) {
            return Err(Error::DuplicateSession(init.object_id.clone()));
        }
        let anchor = self
            .video
            .dominant_actor(init.first_frame_index, &init.first_mask)?;
        let drift = match self.profile {
            MockProfile::Oracle => None,
            MockProfile::Scenario => anchor.and_then(|a| self.video.actor(a)).and_then(|a| a.drift),
        };
        self.sessions.insert(
            sid.clone(),
            SegSession {
                anchor,
                drift,
                drift_cancelled: false,
                lost: false,
                last_frame: init.first_frame_index,
                reprop_allowed: false,
                last_prompt: None,
            },
        );
        Ok(SessionId(sid))
    }

    fn propagate(&mut self, session: &SessionId, t: usize) -> Result<Mask> {
        let video = self.video.clone();
        let s = self.session(session)?;
        let in_order = t > s.last_frame || (t == s.last_frame && s.reprop_allowed);
        if !in_order {
            return Err(Error::OutOfOrderFrame {
                requested: t,
                last: s.last_frame,
            });
        }
        s.reprop_allowed = false;
        s.last_frame = t;
        let base = match s.anchor {
            Some(a) => video.actor_mask(a, t)?,
            None => return Ok(Mask::empty(video.dims())),
        };
        let Some(drift) = s.drift else {
            return Ok(base);
        };
        if drift.occlusion_blindness && base.is_empty() {
            s.lost = true;
        }
        if s.lost {
            return Ok(Mask::empty(video.dims()));
        }
        if s.drift_cancelled || t < drift.drift_start {
            return Ok(base);
        }
        Ok(drifted_mask(&base, &drift, t - drift.drift_start))
    }

    fn prompt_box(&mut self, session: &SessionId, t: usize, bbox: BBox) -> Result<()> {
        let video = self.video.clone();
        let s = self.session(session)?;
        if t < s.last_frame || s.last_prompt == Some(t) {
            return Err(Error::StaleFrame {
                requested: t,
                last: s.last_frame,
            });
        }
        s.anchor = video.dominant_in_box(t, &bbox)?;
        s.drift_cancelled = true;
        s.lost = false;
        s.last_prompt = Some(t);
        s.reprop_allowed = t == s.last_frame;
        Ok(())
    }
}

/// Seeded jitter for the noisy tracker: a ChaCha8 stream seeded with
/// `seed ^ frame * 0x9E3779B97F4A7C15`, drawing dx then dy uniformly from
/// `-jitter..=jitter`.
pub fn tracker_jitter(seed: u64, frame: usize, jitter: u32) -> (i64, i64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (frame as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let j = i64::from(jitter);
    (rng.random_range(-j..=j), rng.random_range(-j..=j))
}

pub struct MockTracker {
    video: Arc<MockVideo>,
    profile: MockProfile,
    actor: Option<Option<u16>>,
    last_seen: Option<(usize, BBox)>,
}

impl MockTracker {
    pub fn new(video: Arc<MockVideo>, profile: MockProfile) -> Self {
        Self {
            video,
            profile,
            actor: None,
            last_seen: None,
        }
    }

    /// Seed of the jitter stream for `actor`.
    pub fn noise_seed(spec: &ScenarioSpec, actor: u16) -> u64 {
        spec.seed.wrapping_add(u64::from(actor))
    }
}

impl Tracker for MockTracker {
    fn init(&mut self, first_frame: &FrameRef, template: BBox) -> Result<()> {
        let actor = self.video.dominant_in_box(first_frame.frame_index, &template)?;
        self.actor = Some(actor);
        self.last_seen = Some((first_frame.frame_index, template));
        Ok(())
    }

    fn track(&mut self, t: usize) -> Result<TrackOutput> {
        let actor = self.actor.ok_or(Error::NotInitialized)?;
        let Some(actor) = actor else {
            return Ok(TrackOutput::missing());
        };
        let visible = mask_to_bbox(&self.video.actor_mask(actor, t)?);
        if self.profile == MockProfile::Oracle {
            return Ok(visible.map_or_else(TrackOutput::missing, |b| TrackOutput::found(b, 1.0)));
        }
        let noise = self.video.spec.mocks.tracker_noise;
        let (dx, dy) = tracker_jitter(MockTracker::noise_seed(&self.video.spec, actor), t, noise.jitter_px);
        let jittered = |b: BBox| {
            BBox::clipped(
                i64::from(b.x0()) + dx,
                i64::from(b.y0()) + dy,
                i64::from(b.x1()) + dx,
                i64::from(b.y1()) + dy,
                self.video.dims(),
            )
        };
        match visible {
            Some(b) => {
                self.last_seen = Some((t, b));
                Ok(jittered(b).map_or_else(TrackOutput::missing, |j| TrackOutput::found(j, 1.0)))
            }
            None => {
                let Some((seen_at, b)) = self.last_seen else {
                    return Ok(TrackOutput::missing());
                };
                let gone = t.saturating_sub(seen_at) as f64;
                let confidence = 1.0 - noise.confidence_decay * gone;
                if confidence <= 0.0 {
                    return Ok(TrackOutput::missing());
                }
                Ok(jittered(b).map_or_else(TrackOutput::missing, |j| {
                    TrackOutput::found(j, confidence.min(1.0))
                }))
            }
        }
    }
}

/// Text the mock detector produces for an actor; the leading `#<id>` is how
/// it recognises its own descriptions.
pub fn describe_actor(actor: &ActorSpec) -> String {
    let shape = match actor.shape {
        crate::simulator::Shape::Rect => "square",
        crate::simulator::Shape::Disc => "disc",
    };
    match &actor.attribute {
        Some(attr) => format!("#{} {shape} of size {}, {attr}", actor.id, actor.size),
        None => format!("#{} {shape} of size {}", actor.id, actor.size),
    }
}

fn parse_description(desc: &str) -> Option<u16> {
    desc.strip_prefix('#')?
        .split(|c: char| !c.is_ascii_digit())
        .next()?
        .parse()
        .ok()
}

pub struct MockDetector {
    video: Arc<MockVideo>,
    profile: MockProfile,
    described: bool,
}

impl MockDetector {
    pub fn new(video: Arc<MockVideo>, profile: MockProfile) -> Self {
        Self {
            video,
            profile,
            described: false,
        }
    }
}

impl Detector for MockDetector {
    fn describe(&mut self, first_frame: &FrameRef, mask: &Mask) -> Result<String> {
        let actor = self.video.dominant_actor(first_frame.frame_index, mask)?;
        self.described = true;
        Ok(actor
            .and_then(|a| self.video.actor(a))
            .map_or_else(|| "nothing".to_string(), describe_actor))
    }

    fn detect(&mut self, t: usize, description: &str) -> Result<TrackOutput> {
        if !self.described {
            return Err(Error::NotInitialized);
        }
        let Some(mut actor) = parse_description(description) else {
            return Ok(TrackOutput::missing());
        };
        if self.profile == MockProfile::Scenario {
            if let Some(c) = self
                .video
                .actor(actor)
                .and_then(|a| a.confusions.iter().find(|c| c.start <= t && t <= c.end))
            {
                actor = c.actor;
            }
        }
        let bbox = mask_to_bbox(&self.video.actor_mask(actor, t)?);
        Ok(bbox.map_or_else(TrackOutput::missing, |b| TrackOutput::found(b, 1.0)))
    }
}

/// Pixel IoU between a crop rectangle and a mask, as an exact fraction.
fn crop_overlap(crop: &BBox, mask: &Mask) -> (u64, u64) {
    let rect = Mask::from_bbox(mask.dims(), crop);
    let inter = intersection_area(&rect, mask).expect("same dims");
    (inter, crop.area() + mask_area(mask) - inter)
}

pub struct MockJudge {
    video: Arc<MockVideo>,
    profile: MockProfile,
}

impl MockJudge {
    pub fn new(video: Arc<MockVideo>, profile: MockProfile) -> Self {
        Self { video, profile }
    }

    /// Picks the crop whose pixels agree best (IoU) with the reference
    /// actor's visible mask at that frame. Exact ties keep the baseline.
    fn identity_verdict(&self, reference: &Crop, baseline: &Crop, auxiliary: &Crop) -> Result<JudgeVerdict> {
        let Some(actor) = self.video.dominant_in_box(reference.frame.frame_index, &reference.bbox)? else {
            return Ok(JudgeVerdict {
                choice: JudgeChoice::BaselineCrop,
                rationale: "reference shows no object".into(),
            });
        };
        let score = |c: &Crop| -> Result<(u64, u64)> {
            Ok(crop_overlap(&c.bbox, &self.video.actor_mask(actor, c.frame.frame_index)?))
        };
        let (bi, bu) = score(baseline)?;
        let (ai, au) = score(auxiliary)?;
        // ai/au > bi/bu, cross-multiplied
        let aux_wins = u128::from(ai) * u128::from(bu) > u128::from(bi) * u128::from(au);
        Ok(JudgeVerdict {
            choice: if aux_wins {
                JudgeChoice::AuxiliaryCrop
            } else {
                JudgeChoice::BaselineCrop
            },
            rationale: format!("overlap with #{actor}: baseline {bi}/{bu}, auxiliary {ai}/{au}"),
        })
    }
}

impl Judge for MockJudge {
    fn classify_semantic(&mut self, frame: &FrameRef, mask: &Mask) -> Result<SemanticVerdict> {
        let attribute = self
            .video
            .dominant_actor(frame.frame_index, mask)?
            .and_then(|a| self.video.actor(a))
            .and_then(|a| a.attribute.clone());
        Ok(SemanticVerdict {
            distinct: attribute.is_some(),
            description: attribute,
        })
    }

    fn compare(&mut self, reference: &Crop, baseline: &Crop, auxiliary: &Crop) -> Result<JudgeVerdict> {
        if self.profile == MockProfile::Scenario {
            if let Some(script) = self.video.spec.mocks.judge_script.get(&baseline.frame.frame_index) {
                let choice = match script {
                    JudgeChoiceScript::Baseline => JudgeChoice::BaselineCrop,
                    JudgeChoiceScript::Auxiliary => JudgeChoice::AuxiliaryCrop,
                };
                return Ok(JudgeVerdict {
                    choice,
                    rationale: "scripted".into(),
                });
            }
        }
        self.identity_verdict(reference, baseline, auxiliary)
    }
}
