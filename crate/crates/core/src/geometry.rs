//! Binary masks, boxes and the pixel arithmetic built on them.
//!
//! A [`Mask`] is stored as a canonical row-major run-length encoding: the
//! first count is the leading run of zeros (possibly 0) and every later count
//! is at least 1, alternating ones and zeros. All IoU values are computed from
//! exact integer pixel counts with a single final division.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Frame width and height in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: u32,
    pub height: u32,
}

impl Dims {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

/// A pixel coordinate, column then row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pixel {
    pub x: u32,
    pub y: u32,
}

/// Half-open integer rectangle `[x0, x1) x [y0, y1)` with positive area.
///
/// An empty box is never represented; APIs return `Option<BBox>` instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BBox {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        if x0 < x1 && y0 < y1 {
            Ok(Self { x0, y0, x1, y1 })
        } else {
            Err(Error::InvalidBBox(x0.into(), y0.into(), x1.into(), y1.into()))
        }
    }

    /// Builds a box from signed coordinates, clipping to `dims`. Returns
    /// `None` when nothing remains inside the frame.
    pub fn clipped(x0: i64, y0: i64, x1: i64, y1: i64, dims: Dims) -> Option<Self> {
        let cx0 = x0.clamp(0, dims.width.into());
        let cy0 = y0.clamp(0, dims.height.into());
        let cx1 = x1.clamp(0, dims.width.into());
        let cy1 = y1.clamp(0, dims.height.into());
        if cx0 < cx1 && cy0 < cy1 {
            Some(Self {
                x0: cx0 as u32,
                y0: cy0 as u32,
                x1: cx1 as u32,
                y1: cy1 as u32,
            })
        } else {
            None
        }
    }

    pub fn x0(&self) -> u32 {
        self.x0
    }
    pub fn y0(&self) -> u32 {
        self.y0
    }
    pub fn x1(&self) -> u32 {
        self.x1
    }
    pub fn y1(&self) -> u32 {
        self.y1
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn contains(&self, p: Pixel) -> bool {
        p.x >= self.x0 && p.x < self.x1 && p.y >= self.y0 && p.y < self.y1
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        BBox::new(x0, y0, x1, y1).ok()
    }

    pub fn to_array(&self) -> [u32; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Option<BBox> {
        let x0 = i64::from(self.x0) + dx;
        let y0 = i64::from(self.y0) + dy;
        if x0 < 0 || y0 < 0 {
            return None;
        }
        BBox::new(
            x0 as u32,
            y0 as u32,
            (i64::from(self.x1) + dx) as u32,
            (i64::from(self.y1) + dy) as u32,
        )
        .ok()
    }
}

impl TryFrom<[i64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [i64; 4]) -> Result<Self> {
        if v.iter().any(|c| *c < 0 || *c > i64::from(u32::MAX)) {
            return Err(Error::InvalidBBox(v[0], v[1], v[2], v[3]));
        }
        BBox::new(v[0] as u32, v[1] as u32, v[2] as u32, v[3] as u32)
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.x1, self.y1)
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = <[i64; 4]>::deserialize(d)?;
        BBox::try_from(raw).map_err(serde::de::Error::custom)
    }
}

/// Binary mask in canonical row-major RLE.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl Mask {
    /// All-zero mask.
    pub fn empty(dims: Dims) -> Self {
        assert!(dims.width > 0 && dims.height > 0, "mask dims must be positive");
        Self {
            width: dims.width,
            height: dims.height,
            runs: vec![dims.width * dims.height],
        }
    }

    /// Validates `runs` against the canonical form.
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidMask(format!("zero dimension {width}x{height}")));
        }
        if runs.is_empty() {
            return Err(Error::InvalidMask("no runs".into()));
        }
        if let Some(pos) = runs.iter().skip(1).position(|c| *c == 0) {
            return Err(Error::InvalidMask(format!("zero-length run at index {}", pos + 1)));
        }
        let total: u64 = runs.iter().map(|c| u64::from(*c)).sum();
        let expected = u64::from(width) * u64::from(height);
        if total != expected {
            return Err(Error::InvalidMask(format!(
                "runs sum to {total}, expected {expected}"
            )));
        }
        Ok(Self { width, height, runs })
    }

    /// Encodes a row-major grid.
    pub fn from_bits(dims: Dims, bits: &[bool]) -> Result<Self> {
        if dims.width == 0 || dims.height == 0 {
            return Err(Error::InvalidMask("zero dimension".into()));
        }
        if bits.len() as u64 != dims.area() {
            return Err(Error::InvalidMask(format!(
                "grid has {} cells, expected {}",
                bits.len(),
                dims.area()
            )));
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut count = 0u32;
        for &b in bits {
            if b != current {
                runs.push(count);
                count = 0;
                current = b;
            }
            count += 1;
        }
        runs.push(count);
        Ok(Self {
            width: dims.width,
            height: dims.height,
            runs,
        })
    }

    pub fn from_fn(dims: Dims, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dims.area() as usize);
        for y in 0..dims.height {
            for x in 0..dims.width {
                bits.push(f(x, y));
            }
        }
        Self::from_bits(dims, &bits).expect("dims are positive")
    }

    /// Filled rectangle.
    pub fn from_bbox(dims: Dims, b: &BBox) -> Self {
        Self::from_fn(dims, |x, y| b.contains(Pixel { x, y }))
    }

    pub fn to_bits(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(self.dims().area() as usize);
        let mut value = false;
        for &c in &self.runs {
            bits.extend(std::iter::repeat_n(value, c as usize));
            value = !value;
        }
        bits
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn is_empty(&self) -> bool {
        self.runs.len() == 1
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        let idx = u64::from(y) * u64::from(self.width) + u64::from(x);
        self.foreground_runs()
            .any(|(s, e)| s <= idx && idx < e)
    }

    /// Half-open flat index ranges of 1-pixels, in increasing order.
    pub fn foreground_runs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.runs.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += u64::from(c);
            (i % 2 == 1).then_some((start, pos))
        })
    }

    /// Shifts every 1-pixel by `(dx, dy)`; pixels leaving the frame are dropped.
    pub fn translate(&self, dx: i64, dy: i64) -> Mask {
        if dx == 0 && dy == 0 {
            return self.clone();
        }
        let bits = self.to_bits();
        let (w, h) = (i64::from(self.width), i64::from(self.height));
        Mask::from_fn(self.dims(), |x, y| {
            let sx = i64::from(x) - dx;
            let sy = i64::from(y) - dy;
            sx >= 0 && sy >= 0 && sx < w && sy < h && bits[(sy * w + sx) as usize]
        })
    }

    /// Keeps only the 1-pixels inside `b`.
    pub fn restrict(&self, b: &BBox) -> Mask {
        let bits = self.to_bits();
        let w = self.width;
        Mask::from_fn(self.dims(), |x, y| {
            b.contains(Pixel { x, y }) && bits[(y * w + x) as usize]
        })
    }

    /// Canonical text form `"<w> <h> <c0> <c1> ..."`.
    pub fn to_rle_string(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.width, self.height)?;
        for c in &self.runs {
            write!(f, " {c}")?;
        }
        Ok(())
    }
}

impl FromStr for Mask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut fields = s.split_ascii_whitespace().map(|tok| {
            tok.parse::<u32>()
                .map_err(|_| Error::InvalidMask(format!("bad count `{tok}`")))
        });
        let width = fields
            .next()
            .ok_or_else(|| Error::InvalidMask("missing width".into()))??;
        let height = fields
            .next()
            .ok_or_else(|| Error::InvalidMask("missing height".into()))??;
        let runs = fields.collect::<Result<Vec<_>>>()?;
        Mask::from_runs(width, height, runs)
    }
}

impl Serialize for Mask {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_rle_string())
    }
}

impl<'de> Deserialize<'de> for Mask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_dims(a: &Mask, b: &Mask) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left_w: a.width,
            left_h: a.height,
            right_w: b.width,
            right_h: b.height,
        });
    }
    Ok(())
}

/// Number of 1-pixels.
pub fn mask_area(m: &Mask) -> u64 {
    m.runs.iter().skip(1).step_by(2).map(|c| u64::from(*c)).sum()
}

/// Tightest box around the 1-pixels, or `None` for an empty mask.
pub fn mask_to_bbox(m: &Mask) -> Option<BBox> {
    let w = u64::from(m.width);
    let (mut x0, mut y0, mut x1, mut y1) = (u64::MAX, u64::MAX, 0u64, 0u64);
    for (start, end) in m.foreground_runs() {
        let last = end - 1;
        let (r0, r1) = (start / w, last / w);
        y0 = y0.min(r0);
        y1 = y1.max(r1 + 1);
        if r0 == r1 {
            x0 = x0.min(start % w);
            x1 = x1.max(last % w + 1);
        } else {
            // A run that wraps a row boundary reaches both the last and the first column.
            x0 = 0;
            x1 = w;
        }
    }
    if x0 == u64::MAX {
        return None;
    }
    Some(BBox {
        x0: x0 as u32,
        y0: y0 as u32,
        x1: x1 as u32,
        y1: y1 as u32,
    })
}

/// Intersection over union of two boxes by pixel area.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Exact count of pixels set in both masks.
pub fn intersection_area(a: &Mask, b: &Mask) -> Result<u64> {
    check_dims(a, b)?;
    let mut ra = a.foreground_runs().peekable();
    let mut rb = b.foreground_runs().peekable();
    let mut total = 0u64;
    while let (Some(&(sa, ea)), Some(&(sb, eb))) = (ra.peek(), rb.peek()) {
        let lo = sa.max(sb);
        let hi = ea.min(eb);
        if lo < hi {
            total += hi - lo;
        }
        if ea <= eb {
            ra.next();
        } else {
            rb.next();
        }
    }
    Ok(total)
}

/// Mask IoU; two empty masks score 1.0.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    let inter = intersection_area(a, b)?;
    let union = mask_area(a) + mask_area(b) - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// 1-pixels with at least one 4-neighbour that is 0 or outside the frame,
/// in row-major order.
pub fn boundary_pixels(m: &Mask) -> Vec<Pixel> {
    let bits = m.to_bits();
    let (w, h) = (m.width, m.height);
    let at = |x: u32, y: u32| bits[(y * w + x) as usize];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !at(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !at(x - 1, y)
                || !at(x + 1, y)
                || !at(x, y - 1)
                || !at(x, y + 1);
            if edge {
                out.push(Pixel { x, y });
            }
        }
    }
    out
}

/// Expands `b` by `pad` on every side and clamps to the frame.
pub fn crop(frame: Dims, b: &BBox, pad: u32) -> BBox {
    BBox {
        x0: b.x0.saturating_sub(pad),
        y0: b.y0.saturating_sub(pad),
        x1: b.x1.saturating_add(pad).min(frame.width).max(b.x0.saturating_sub(pad) + 1),
        y1: b.y1.saturating_add(pad).min(frame.height).max(b.y0.saturating_sub(pad) + 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, dims: Dims, density: f64) -> Vec<bool> {
        (0..dims.area()).map(|_| rng.random_bool(density)).collect()
    }

    #[test]
    fn area_trivial_cases() {
        let d = Dims::new(3, 3);
        assert_eq!(mask_area(&Mask::empty(d)), 0);
        assert_eq!(mask_area(&Mask::from_fn(d, |_, _| true)), 9);
        assert_eq!(Mask::from_fn(d, |_, _| true).runs(), &[0, 9]);
    }

    #[test]
    fn area_matches_pixel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = Dims::new(16, 16);
        for _ in 0..50 {
            let grid = random_grid(&mut rng, d, 0.4);
            let m = Mask::from_bits(d, &grid).unwrap();
            let expected = grid.iter().filter(|b| **b).count() as u64;
            assert_eq!(mask_area(&m), expected);
        }
    }

    #[test]
    fn bbox_of_block() {
        let d = Dims::new(10, 10);
        assert_eq!(mask_to_bbox(&Mask::empty(d)), None);
        let m = Mask::from_fn(d, |x, y| (2..=4).contains(&y) && (3..=7).contains(&x));
        assert_eq!(mask_to_bbox(&m), Some(BBox::new(3, 2, 8, 5).unwrap()));
    }

    #[test]
    fn bbox_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = Dims::new(16, 16);
        for _ in 0..100 {
            let density = rng.random_range(0.0..0.2);
            let grid = random_grid(&mut rng, d, density);
            let m = Mask::from_bits(d, &grid).unwrap();
            let ones: Vec<(u32, u32)> = (0..16u32)
                .flat_map(|y| (0..16u32).map(move |x| (x, y)))
                .filter(|(x, y)| grid[(y * 16 + x) as usize])
                .collect();
            let expected = if ones.is_empty() {
                None
            } else {
                let x0 = ones.iter().map(|p| p.0).min().unwrap();
                let x1 = ones.iter().map(|p| p.0).max().unwrap() + 1;
                let y0 = ones.iter().map(|p| p.1).min().unwrap();
                let y1 = ones.iter().map(|p| p.1).max().unwrap() + 1;
                Some(BBox::new(x0, y0, x1, y1).unwrap())
            };
            assert_eq!(mask_to_bbox(&m), expected);
        }
    }

    #[test]
    fn bbox_iou_cases() {
        let a = BBox::new(0, 0, 10, 10).unwrap();
        let b = BBox::new(5, 0, 15, 10).unwrap();
        let far = BBox::new(20, 20, 25, 25).unwrap();
        assert_eq!(bbox_iou(&a, &a), 1.0);
        assert_eq!(bbox_iou(&a, &far), 0.0);
        // pixel enumeration over a 20x10 grid
        let (mut inter, mut union) = (0u32, 0u32);
        for y in 0..10 {
            for x in 0..20 {
                let p = Pixel { x, y };
                let (ia, ib) = (a.contains(p), b.contains(p));
                inter += u32::from(ia && ib);
                union += u32::from(ia || ib);
            }
        }
        assert_eq!((inter, union), (50, 150));
        assert_eq!(bbox_iou(&a, &b), 50.0 / 150.0);
    }

    #[test]
    fn mask_iou_cases() {
        let d = Dims::new(8, 8);
        let e = Mask::empty(d);
        let m = Mask::from_fn(d, |x, y| x < 4 && y < 3);
        assert_eq!(mask_iou(&m, &m).unwrap(), 1.0);
        assert_eq!(mask_iou(&e, &e).unwrap(), 1.0);
        assert_eq!(mask_iou(&m, &e).unwrap(), 0.0);
        let other = Mask::empty(Dims::new(8, 9));
        assert!(matches!(
            mask_iou(&m, &other),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mask_iou_matches_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Dims::new(16, 16);
        for _ in 0..100 {
            let ga = random_grid(&mut rng, d, 0.5);
            let gb = random_grid(&mut rng, d, 0.5);
            let inter = ga.iter().zip(&gb).filter(|(a, b)| **a && **b).count();
            let union = ga.iter().zip(&gb).filter(|(a, b)| **a || **b).count();
            let a = Mask::from_bits(d, &ga).unwrap();
            let b = Mask::from_bits(d, &gb).unwrap();
            assert_eq!(intersection_area(&a, &b).unwrap(), inter as u64);
            assert_eq!(mask_iou(&a, &b).unwrap(), inter as f64 / union as f64);
        }
    }

    #[test]
    fn boundary_cases() {
        let single = Mask::from_fn(Dims::new(1, 1), |_, _| true);
        assert_eq!(boundary_pixels(&single), vec![Pixel { x: 0, y: 0 }]);
        assert!(boundary_pixels(&Mask::empty(Dims::new(4, 4))).is_empty());

        let d = Dims::new(5, 5);
        let solid = Mask::from_fn(d, |_, _| true);
        let b = boundary_pixels(&solid);
        let expected: Vec<Pixel> = (0..5u32)
            .flat_map(|y| (0..5u32).map(move |x| Pixel { x, y }))
            .filter(|p| p.x == 0 || p.y == 0 || p.x == 4 || p.y == 4)
            .collect();
        assert_eq!(b.len(), 16);
        assert_eq!(b, expected);
    }

    #[test]
    fn crop_cases() {
        let f = Dims::new(10, 10);
        let b = BBox::new(2, 3, 5, 6).unwrap();
        assert_eq!(crop(f, &b, 0), b);
        assert_eq!(
            crop(f, &BBox::new(0, 0, 4, 4).unwrap(), 2),
            BBox::new(0, 0, 6, 6).unwrap()
        );
        // 6-4=2, 9+4=13 clamped to 10
        assert_eq!(
            crop(f, &BBox::new(6, 6, 9, 9).unwrap(), 4),
            BBox::new(2, 2, 10, 10).unwrap()
        );
    }

    #[test]
    fn rle_text_form() {
        let m: Mask = "3 2 1 2 3".parse().unwrap();
        assert_eq!(m.to_bits(), vec![false, true, true, false, false, false]);
        assert_eq!(m.to_rle_string(), "3 2 1 2 3");
        assert!("3 2 1 2".parse::<Mask>().is_err());
        assert!("3 2 1 0 5".parse::<Mask>().is_err());
        assert!("0 2 0".parse::<Mask>().is_err());
        assert!("3 x 6".parse::<Mask>().is_err());
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "\"3 2 1 2 3\"");
    }

    #[test]
    fn bbox_rejects_degenerate() {
        assert!(BBox::new(3, 3, 3, 5).is_err());
        assert!(BBox::try_from([-1, 0, 2, 2]).is_err());
        let b: BBox = serde_json::from_str("[1,2,3,4]").unwrap();
        assert_eq!(b.to_array(), [1, 2, 3, 4]);
        assert!(serde_json::from_str::<BBox>("[3,2,3,4]").is_err());
    }

    #[test]
    fn translate_drops_offframe_pixels() {
        let d = Dims::new(4, 1);
        let m = Mask::from_bits(d, &[false, false, true, true]).unwrap();
        let t = m.translate(1, 0);
        assert_eq!(t.to_bits(), vec![false, false, false, true]);
        assert_eq!(m.translate(-2, 0).to_bits(), vec![true, true, false, false]);
    }
}
