//! Deterministic synthetic scenarios: actors moving along waypoint paths,
//! rasterized into per-frame label grids with ground-truth target masks.
//!
//! Frames are label grids rather than images: each pixel carries the id of
//! the actor drawn on top there, [`BACKGROUND`] or [`CLUTTER`]. Draw order is
//! target, then distractor, then occluder, so occluders hide whatever lies
//! beneath them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::mock::{Confusion, DriftModel, JudgeChoiceScript, TrackerNoise};
use crate::dataset::{ObjectEntry, VideoEntry};
use crate::error::{Error, Result};
use crate::geometry::{Dims, Mask};

pub const BACKGROUND: u16 = 0;
pub const CLUTTER: u16 = u16::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Axis-aligned square with side `size`.
    Rect,
    /// Disc of radius `size / 2`.
    Disc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Identity {
    Target,
    Distractor,
    Occluder,
}

/// Position of the shape centre at a given frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Waypoint {
    pub frame: usize,
    pub x: i64,
    pub y: i64,
}

/// Inclusive frame interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRange {
    pub start: usize,
    pub end: usize,
}

impl FrameRange {
    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub id: u16,
    pub shape: Shape,
    pub size: u32,
    pub trajectory: Vec<Waypoint>,
    pub identity: Identity,
    /// Frames where the actor is in view; empty means always.
    #[serde(default)]
    pub visible_ranges: Vec<FrameRange>,
    /// A verbalizable attribute that singles the actor out from look-alikes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    /// Failure injected into the mock segmenter following this actor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftModel>,
    /// Frames where the scripted detector reports a look-alike instead.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub confusions: Vec<Confusion>,
}

impl ActorSpec {
    pub fn visible_at(&self, t: usize) -> bool {
        self.visible_ranges.is_empty() || self.visible_ranges.iter().any(|r| r.contains(t))
    }

    /// Centre at frame `t`: linear interpolation between waypoints with
    /// round-half-up, held constant outside the waypoint span.
    pub fn position(&self, t: usize) -> (i64, i64) {
        let path = &self.trajectory;
        let first = path[0];
        if t <= first.frame {
            return (first.x, first.y);
        }
        for pair in path.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if t <= b.frame {
                let num = (t - a.frame) as i64;
                let den = (b.frame - a.frame) as i64;
                return (lerp(a.x, b.x, num, den), lerp(a.y, b.y, num, den));
            }
        }
        let last = path[path.len() - 1];
        (last.x, last.y)
    }

    fn covers(&self, cx: i64, cy: i64, x: i64, y: i64) -> bool {
        let s = i64::from(self.size);
        match self.shape {
            Shape::Rect => {
                let x0 = cx - s / 2;
                let y0 = cy - s / 2;
                x >= x0 && x < x0 + s && y >= y0 && y < y0 + s
            }
            Shape::Disc => {
                let r = s / 2;
                (x - cx).pow(2) + (y - cy).pow(2) <= r * r
            }
        }
    }
}

fn lerp(p0: i64, p1: i64, num: i64, den: i64) -> i64 {
    let delta = (p1 - p0) * num;
    p0 + (2 * delta + den).div_euclid(2 * den)
}

/// Knobs shared by the mock backends of one scenario.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub tracker_noise: TrackerNoise,
    /// Verdicts for the scripted judge, keyed by frame.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub judge_script: BTreeMap<usize, JudgeChoiceScript>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub num_frames: usize,
    pub seed: u64,
    pub actors: Vec<ActorSpec>,
    /// Density of static background clutter, in [0, 1].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default)]
    pub mocks: MockScript,
}

impl ScenarioSpec {
    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    pub fn actor(&self, id: u16) -> Option<&ActorSpec> {
        self.actors.iter().find(|a| a.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::SpecError(m));
        if self.width == 0 || self.height == 0 || self.num_frames == 0 {
            return err("frame size and count must be positive".into());
        }
        if !self.actors.iter().any(|a| a.identity == Identity::Target) {
            return err("no target actor".into());
        }
        if let Some(n) = self.noise {
            if !(0.0..=1.0).contains(&n) {
                return err(format!("noise density {n} outside [0, 1]"));
            }
        }
        let mut ids: Vec<u16> = self.actors.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return err("duplicate actor id".into());
        }
        for a in &self.actors {
            if a.id == BACKGROUND || a.id == CLUTTER {
                return err(format!("reserved actor id {}", a.id));
            }
            if a.size == 0 {
                return err(format!("actor {} has zero size", a.id));
            }
            if a.trajectory.is_empty() {
                return err(format!("actor {} has no waypoints", a.id));
            }
            if a.trajectory.windows(2).any(|w| w[0].frame >= w[1].frame) {
                return err(format!("actor {} waypoints not strictly increasing", a.id));
            }
            for p in &a.trajectory {
                if p.x < 0 || p.y < 0 || p.x >= i64::from(self.width) || p.y >= i64::from(self.height) {
                    return err(format!(
                        "actor {} waypoint ({}, {}) outside {}x{} frame",
                        a.id, p.x, p.y, self.width, self.height
                    ));
                }
            }
            for r in &a.visible_ranges {
                if r.start > r.end {
                    return err(format!("actor {} has inverted range", a.id));
                }
            }
            if a.visible_ranges.windows(2).any(|w| w[1].start <= w[0].end) {
                return err(format!("actor {} visible ranges overlap or are unordered", a.id));
            }
        }
        Ok(())
    }
}

/// Per-pixel actor ids for one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    dims: Dims,
    labels: Vec<u16>,
}

impl LabelGrid {
    pub fn new(dims: Dims, labels: Vec<u16>) -> Result<Self> {
        if labels.len() as u64 != dims.area() || dims.area() == 0 {
            return Err(Error::SpecError("label grid size mismatch".into()));
        }
        Ok(Self { dims, labels })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn label(&self, x: u32, y: u32) -> u16 {
        self.labels[(y * self.dims.width + x) as usize]
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn mask_of(&self, id: u16) -> Mask {
        let bits: Vec<bool> = self.labels.iter().map(|l| *l == id).collect();
        Mask::from_bits(self.dims, &bits).expect("grid dims are positive")
    }

    /// Pixel count per label inside the 1-pixels of `region`.
    pub fn histogram_in(&self, region: &Mask) -> BTreeMap<u16, u64> {
        let mut hist = BTreeMap::new();
        for (start, end) in region.foreground_runs() {
            for idx in start..end {
                *hist.entry(self.labels[idx as usize]).or_insert(0) += 1;
            }
        }
        hist
    }
}

/// Text form: `"<w> <h> <label>:<count> ..."`, runs of equal labels in row-major order.
impl fmt::Display for LabelGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.dims.width, self.dims.height)?;
        let mut iter = self.labels.iter().peekable();
        while let Some(&label) = iter.next() {
            let mut count = 1;
            while iter.peek() == Some(&&label) {
                iter.next();
                count += 1;
            }
            write!(f, " {label}:{count}")?;
        }
        Ok(())
    }
}

impl FromStr for LabelGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::SpecError(format!("label grid: {m}"));
        let mut fields = s.split_ascii_whitespace();
        let width: u32 = fields.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("width"))?;
        let height: u32 = fields.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("height"))?;
        let mut labels = Vec::with_capacity((width * height) as usize);
        for tok in fields {
            let (l, c) = tok.split_once(':').ok_or_else(|| bad(tok))?;
            let l: u16 = l.parse().map_err(|_| bad(tok))?;
            let c: usize = c.parse().map_err(|_| bad(tok))?;
            labels.extend(std::iter::repeat_n(l, c));
        }
        LabelGrid::new(Dims::new(width, height), labels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub video_id: String,
    pub spec: ScenarioSpec,
    pub frames: Vec<LabelGrid>,
    /// Ground truth per target, keyed by object id (the actor id in decimal).
    pub gt: BTreeMap<String, Vec<Mask>>,
    pub manifest_entry: VideoEntry,
}

pub fn object_id(actor: u16) -> String {
    actor.to_string()
}

fn clutter_map(spec: &ScenarioSpec) -> Vec<bool> {
    let n = spec.dims().area() as usize;
    match spec.noise {
        Some(d) if d > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            (0..n).map(|_| rng.random_bool(d)).collect()
        }
        _ => vec![false; n],
    }
}

/// Rasterizes one frame.
pub fn render_frame(spec: &ScenarioSpec, clutter: &[bool], t: usize) -> LabelGrid {
    let (w, h) = (spec.width, spec.height);
    let mut labels: Vec<u16> = clutter
        .iter()
        .map(|c| if *c { CLUTTER } else { BACKGROUND })
        .collect();
    let mut order: Vec<&ActorSpec> = spec.actors.iter().collect();
    order.sort_by_key(|a| (a.identity, a.id));
    for actor in order.into_iter().filter(|a| a.visible_at(t)) {
        let (cx, cy) = actor.position(t);
        let reach = i64::from(actor.size) + 1;
        let xs = (cx - reach).max(0)..(cx + reach).min(i64::from(w));
        for y in (cy - reach).max(0)..(cy + reach).min(i64::from(h)) {
            for x in xs.clone() {
                if actor.covers(cx, cy, x, y) {
                    labels[(y * i64::from(w) + x) as usize] = actor.id;
                }
            }
        }
    }
    LabelGrid {
        dims: spec.dims(),
        labels,
    }
}

/// Renders a scenario. Pure in `spec`.
pub fn generate(video_id: &str, spec: &ScenarioSpec) -> Result<SyntheticVideo> {
    spec.validate()?;
    let clutter = clutter_map(spec);
    let frames: Vec<LabelGrid> = (0..spec.num_frames)
        .map(|t| render_frame(spec, &clutter, t))
        .collect();
    let mut gt = BTreeMap::new();
    let mut objects = Vec::new();
    for target in spec.actors.iter().filter(|a| a.identity == Identity::Target) {
        let seq: Vec<Mask> = frames.iter().map(|f| f.mask_of(target.id)).collect();
        let first = seq.iter().position(|m| !m.is_empty()).ok_or_else(|| {
            Error::SpecError(format!("target {} is never visible", target.id))
        })?;
        objects.push(ObjectEntry {
            object_id: object_id(target.id),
            first_frame_index: first,
            first_mask: seq[first].clone(),
        });
        gt.insert(object_id(target.id), seq);
    }
    let manifest_entry = VideoEntry {
        video_id: video_id.to_string(),
        frame_count: spec.num_frames,
        width: spec.width,
        height: spec.height,
        objects,
        gt_path: Some(format!("{video_id}/gt")),
    };
    Ok(SyntheticVideo {
        video_id: video_id.to_string(),
        spec: spec.clone(),
        frames,
        gt,
        manifest_entry,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    DriftTiny,
    DistractorSemantic,
    Reappear,
    Crowded,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::DriftTiny,
        Suite::DistractorSemantic,
        Suite::Reappear,
        Suite::Crowded,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::DriftTiny => "drift-tiny",
            Suite::DistractorSemantic => "distractor-semantic",
            Suite::Reappear => "reappear",
            Suite::Crowded => "crowded",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::UnknownSuite(s.to_string()))
    }
}

pub const SUITE_SIZE: usize = 10;

const ATTRIBUTES: [&str; 6] = [
    "red jersey number 9",
    "yellow logo on the roof",
    "white text reading EXIT",
    "blue striped scarf",
    "green helmet with a star",
    "orange backpack",
];

struct Builder {
    rng: ChaCha8Rng,
    width: u32,
    height: u32,
    frames: usize,
}

impl Builder {
    /// Horizontal back-and-forth path inside a lane centred on `cy`.
    fn lane_path(&mut self, cy: i64, size: u32) -> Vec<Waypoint> {
        let margin = i64::from(size) + 2;
        let w = i64::from(self.width);
        let last = self.frames - 1;
        let mid = self.rng.random_range(last / 3..=2 * last / 3);
        let mut xs = [0i64; 3];
        for x in &mut xs {
            *x = self.rng.random_range(margin..w - margin);
        }
        vec![
            Waypoint { frame: 0, x: xs[0], y: cy },
            Waypoint { frame: mid, x: xs[1], y: cy },
            Waypoint { frame: last, x: xs[2], y: cy },
        ]
    }

    fn lanes(&mut self, n: usize) -> Vec<i64> {
        let band = i64::from(self.height) / n as i64;
        (0..n as i64).map(|i| i * band + band / 2).collect()
    }

    fn attribute(&mut self) -> String {
        ATTRIBUTES[self.rng.random_range(0..ATTRIBUTES.len())].to_string()
    }

    fn spec(&mut self, name: String, actors: Vec<ActorSpec>, noise: Option<f64>) -> ScenarioSpec {
        let seed = self.rng.random();
        ScenarioSpec {
            name,
            width: self.width,
            height: self.height,
            num_frames: self.frames,
            seed,
            actors,
            noise,
            mocks: MockScript::default(),
        }
    }
}

fn actor(id: u16, shape: Shape, size: u32, trajectory: Vec<Waypoint>, identity: Identity) -> ActorSpec {
    ActorSpec {
        id,
        shape,
        size,
        trajectory,
        identity,
        visible_ranges: Vec::new(),
        attribute: None,
        drift: None,
        confusions: Vec::new(),
    }
}

/// Ten seeded scenarios per stress family.
///
/// - `drift-tiny`: 200x150, 40 frames, one square target of side 3 or 4
///   (area ratio 0.0003 to 0.00053), light clutter, segmenter drift of one
///   pixel per frame starting at frame 6..=14.
/// - `distractor-semantic`: 160x120, 40 frames, one attributed target of
///   size 8..=12 plus 3..=5 identical look-alikes in separate lanes; vertical
///   segmenter drift from frame 5..=12; one detector confusion window of
///   4..=8 frames.
/// - `reappear`: 160x120, 50 frames, one or two targets (tiny or attributed)
///   that leave view once for 5..=10 frames starting at 10..=25; the mock
///   segmenter loses a target for good once it disappears.
/// - `crowded`: 160x120, 40 frames, a regular, a tiny and an attributed
///   target, three look-alikes and one occluder sweeping across the lanes.
pub fn scenario_suite(suite: Suite, seed: u64) -> Vec<ScenarioSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(suite as u64 + 1);
    (0..SUITE_SIZE)
        .map(|i| {
            let name = format!("{}-{i:02}", suite.name());
            let stream: u64 = rng.random();
            let b = Builder {
                rng: ChaCha8Rng::seed_from_u64(stream),
                width: 0,
                height: 0,
                frames: 0,
            };
            match suite {
                Suite::DriftTiny => drift_tiny(b, name),
                Suite::DistractorSemantic => distractor_semantic(b, name),
                Suite::Reappear => reappear(b, name),
                Suite::Crowded => crowded(b, name),
            }
        })
        .collect()
}

fn drift_tiny(mut b: Builder, name: String) -> ScenarioSpec {
    (b.width, b.height, b.frames) = (200, 150, 40);
    let size = b.rng.random_range(3..=4);
    let cy = b.rng.random_range(30..120);
    let mut target = actor(1, Shape::Rect, size, b.lane_path(cy, size), Identity::Target);
    let dx = if b.rng.random_bool(0.5) { 1 } else { -1 };
    let dy = b.rng.random_range(-1..=1);
    target.drift = Some(DriftModel {
        drift_start: b.rng.random_range(6..=14),
        drift_offset_per_frame: [dx, dy],
        shrink_per_frame: 0.0,
        occlusion_blindness: false,
    });
    b.spec(name, vec![target], Some(0.01))
}

fn distractor_semantic(mut b: Builder, name: String) -> ScenarioSpec {
    (b.width, b.height, b.frames) = (160, 120, 40);
    let n_distractors = b.rng.random_range(3..=5);
    let shape = if b.rng.random_bool(0.5) { Shape::Rect } else { Shape::Disc };
    let size = b.rng.random_range(8..=12);
    let mut lanes = b.lanes(n_distractors + 1);
    let target_lane = lanes.remove(b.rng.random_range(0..lanes.len()));
    let path = b.lane_path(target_lane, size);
    let mut target = actor(1, shape, size, path, Identity::Target);
    target.attribute = Some(b.attribute());
    let dy = if b.rng.random_bool(0.5) { 1 } else { -1 };
    target.drift = Some(DriftModel {
        drift_start: b.rng.random_range(5..=12),
        drift_offset_per_frame: [0, dy],
        shrink_per_frame: 0.0,
        occlusion_blindness: false,
    });
    let start = b.rng.random_range(2..=30);
    let len = b.rng.random_range(4..=8);
    target.confusions.push(Confusion {
        start,
        end: start + len - 1,
        actor: b.rng.random_range(2..=(n_distractors as u16 + 1)),
    });
    let mut actors = vec![target];
    for (k, lane) in lanes.into_iter().enumerate() {
        let path = b.lane_path(lane, size);
        actors.push(actor(k as u16 + 2, shape, size, path, Identity::Distractor));
    }
    b.spec(name, actors, None)
}

fn reappear(mut b: Builder, name: String) -> ScenarioSpec {
    (b.width, b.height, b.frames) = (160, 120, 50);
    let n_targets = b.rng.random_range(1..=2);
    let semantic: Vec<bool> = (0..n_targets).map(|_| b.rng.random_bool(0.5)).collect();
    let n_distractors = if semantic.iter().any(|s| *s) { 3 } else { 0 };
    let mut lanes = b.lanes(n_targets + n_distractors);
    let mut actors = Vec::new();
    for (k, sem) in semantic.iter().enumerate() {
        let lane = lanes.remove(b.rng.random_range(0..lanes.len()));
        let size = if *sem { 10 } else { 3 };
        let mut target = actor(k as u16 + 1, Shape::Rect, size, b.lane_path(lane, size), Identity::Target);
        if *sem {
            target.attribute = Some(b.attribute());
        }
        let gap_start = b.rng.random_range(10..=25);
        let gap_len = b.rng.random_range(5..=10);
        target.visible_ranges = vec![
            FrameRange { start: 0, end: gap_start - 1 },
            FrameRange { start: gap_start + gap_len, end: b.frames - 1 },
        ];
        target.drift = Some(DriftModel {
            drift_start: b.frames,
            drift_offset_per_frame: [0, 0],
            shrink_per_frame: 0.0,
            occlusion_blindness: true,
        });
        actors.push(target);
    }
    for (k, lane) in lanes.into_iter().enumerate() {
        let path = b.lane_path(lane, 10);
        actors.push(actor((n_targets + k) as u16 + 1, Shape::Rect, 10, path, Identity::Distractor));
    }
    b.spec(name, actors, None)
}

fn crowded(mut b: Builder, name: String) -> ScenarioSpec {
    (b.width, b.height, b.frames) = (160, 120, 40);
    let mut lanes = b.lanes(6);
    let mut take = |b: &mut Builder| lanes.remove(b.rng.random_range(0..lanes.len()));
    let mut actors = Vec::new();

    let lane = take(&mut b);
    let mut regular = actor(1, Shape::Disc, 12, b.lane_path(lane, 12), Identity::Target);
    regular.drift = Some(DriftModel {
        drift_start: b.frames,
        drift_offset_per_frame: [0, 0],
        shrink_per_frame: 0.0,
        occlusion_blindness: true,
    });
    actors.push(regular);

    let lane = take(&mut b);
    let mut tiny = actor(2, Shape::Rect, 3, b.lane_path(lane, 3), Identity::Target);
    tiny.drift = Some(DriftModel {
        drift_start: b.rng.random_range(8..=16),
        drift_offset_per_frame: [1, 0],
        shrink_per_frame: 0.0,
        occlusion_blindness: false,
    });
    actors.push(tiny);

    let lane = take(&mut b);
    let mut semantic = actor(3, Shape::Rect, 10, b.lane_path(lane, 10), Identity::Target);
    semantic.attribute = Some(b.attribute());
    semantic.drift = Some(DriftModel {
        drift_start: b.rng.random_range(8..=16),
        drift_offset_per_frame: [0, 1],
        shrink_per_frame: 0.05,
        occlusion_blindness: false,
    });
    actors.push(semantic);

    for id in 4..=6 {
        let lane = take(&mut b);
        actors.push(actor(id, Shape::Rect, 10, b.lane_path(lane, 10), Identity::Distractor));
    }

    let x = b.rng.random_range(30..130);
    let sweep = vec![
        Waypoint { frame: 0, x, y: 5 },
        Waypoint { frame: b.frames - 1, x, y: i64::from(b.height) - 6 },
    ];
    actors.push(actor(7, Shape::Rect, 16, sweep, Identity::Occluder));
    b.spec(name, actors, Some(0.005))
}
