//! Metrics checked against brute-force reference implementations.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tep_core::geometry::{Dims, Mask};
use tep_core::metrics::{
    boundary_f, classify_presence, diagonal_tolerance, evaluate, region_similarity, score_frames, MetricsConfig,
    Phase,
};

fn bits_of(m: &Mask) -> (u32, u32, Vec<bool>) {
    (m.width(), m.height(), m.to_bits())
}

fn oracle_iou(a: &Mask, b: &Mask) -> f64 {
    let (_, _, x) = bits_of(a);
    let (_, _, y) = bits_of(b);
    let inter = x.iter().zip(&y).filter(|(p, q)| **p && **q).count();
    let union = x.iter().zip(&y).filter(|(p, q)| **p || **q).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn oracle_boundary(m: &Mask) -> Vec<(i64, i64)> {
    let (w, h, bits) = bits_of(m);
    let at = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && bits[(y * w as i64 + x) as usize];
    let mut out = Vec::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if at(x, y) && (!at(x - 1, y) || !at(x + 1, y) || !at(x, y - 1) || !at(x, y + 1)) {
                out.push((x, y));
            }
        }
    }
    out
}

/// All-pairs matcher: O(|P| * |G|).
fn oracle_f(pred: &Mask, gt: &Mask, tol: u32) -> f64 {
    let p = oracle_boundary(pred);
    let g = oracle_boundary(gt);
    match (p.is_empty(), g.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let t2 = i64::from(tol) * i64::from(tol);
    let near = |a: &(i64, i64), set: &[(i64, i64)]| {
        set.iter().any(|b| (a.0 - b.0).pow(2) + (a.1 - b.1).pow(2) <= t2)
    };
    let precision = p.iter().filter(|a| near(a, &g)).count() as f64 / p.len() as f64;
    let recall = g.iter().filter(|a| near(a, &p)).count() as f64 / g.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Phases transcribed directly from their definition.
fn reference_phases(present: &[bool]) -> Vec<Phase> {
    let mut out = Vec::new();
    let mut seen = false;
    let mut gone_once = false;
    for &p in present {
        out.push(match (p, seen, gone_once) {
            (false, false, _) => Phase::BeforeFirstAppearance,
            (true, _, false) => Phase::Visible,
            (false, true, _) => Phase::Disappeared,
            (true, _, true) => Phase::Reappeared,
        });
        if p {
            seen = true;
        } else if seen {
            gone_once = true;
        }
    }
    out
}

fn random_mask(rng: &mut ChaCha8Rng, d: Dims) -> Mask {
    // Blobs rather than salt noise so boundaries are realistic.
    let n = rng.random_range(0..4);
    let blobs: Vec<(i64, i64, i64)> = (0..n)
        .map(|_| (rng.random_range(0..d.width as i64), rng.random_range(0..d.height as i64), rng.random_range(1..6)))
        .collect();
    let noise: Vec<bool> = (0..d.area()).map(|_| rng.random_bool(0.05)).collect();
    Mask::from_fn(d, |x, y| {
        noise[(y * d.width + x) as usize]
            || blobs
                .iter()
                .any(|(cx, cy, r)| (x as i64 - cx).pow(2) + (y as i64 - cy).pow(2) <= r * r)
    })
}

#[test]
fn seeded_pairs_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = Dims::new(16, 16);
    for _ in 0..200 {
        let a = random_mask(&mut rng, d);
        let b = random_mask(&mut rng, d);
        let j = region_similarity(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap();
        assert_eq!(j.per_frame[0], oracle_iou(&a, &b));
        for tol in 0..=2 {
            let f = boundary_f(&a, &b, tol).unwrap();
            assert!((f - oracle_f(&a, &b, tol)).abs() <= 1e-12);
        }
    }
}

#[test]
fn diagonal_tolerance_is_least_integer_above_threshold() {
    for w in 1..400u32 {
        for h in [1u32, 2, 7, 99, 120, 150, 333, 1080] {
            let t = diagonal_tolerance(Dims::new(w, h));
            let d2 = u64::from(w).pow(2) + u64::from(h).pow(2);
            let ok = |t: u64| 15625 * t * t >= d2;
            assert!(ok(u64::from(t)));
            assert!(t == 0 || !ok(u64::from(t) - 1), "{w}x{h} -> {t}");
        }
    }
    assert_eq!(diagonal_tolerance(Dims::new(854, 480)), 8);
    assert_eq!(diagonal_tolerance(Dims::new(160, 120)), 2);
}

#[test]
fn seeded_presence_strings_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let n = rng.random_range(0..40);
        let p = rng.random_range(0.1..0.9);
        let present: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
        let got: Vec<Phase> = classify_presence(&present).iter().map(|s| s.phase).collect();
        assert_eq!(got, reference_phases(&present));
    }
}

#[test]
fn three_object_fixture_equals_hand_composed_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = Dims::new(16, 16);
    let mut pred = BTreeMap::new();
    let mut gt = BTreeMap::new();
    for id in ["a", "b", "c"] {
        let g: Vec<Mask> = (0..6)
            .map(|t| if t == 2 { Mask::empty(d) } else { random_mask(&mut rng, d) })
            .collect();
        let p: Vec<Mask> = (0..6).map(|_| random_mask(&mut rng, d)).collect();
        gt.insert(id.to_string(), g);
        pred.insert(id.to_string(), p);
    }
    let cfg = MetricsConfig::default();
    let report = evaluate(&pred, &gt, &cfg).unwrap();
    let mut js = Vec::new();
    for id in ["a", "b", "c"] {
        let frames = score_frames(&pred[id], &gt[id], &cfg).unwrap();
        let counted: Vec<usize> = (0..6).filter(|t| frames[*t].counted).collect();
        let j = counted.iter().map(|t| oracle_iou(&pred[id][*t], &gt[id][*t])).sum::<f64>() / counted.len() as f64;
        let tol = diagonal_tolerance(d);
        let f = counted.iter().map(|t| oracle_f(&pred[id][*t], &gt[id][*t], tol)).sum::<f64>() / counted.len() as f64;
        let obj = report.per_object.iter().find(|o| o.object_id == id).unwrap();
        assert!((obj.scores.j - j).abs() < 1e-12);
        assert!((obj.scores.f - f).abs() < 1e-12);
        js.push(j);
    }
    assert!((report.scores.j - js.iter().sum::<f64>() / 3.0).abs() < 1e-12);
}

fn mask_pair() -> impl Strategy<Value = (Mask, Mask)> {
    (1u32..20, 1u32..20).prop_flat_map(|(w, h)| {
        let n = (w * h) as usize;
        let d = Dims::new(w, h);
        (
            proptest::collection::vec(proptest::bool::weighted(0.4), n),
            proptest::collection::vec(proptest::bool::weighted(0.4), n),
        )
            .prop_map(move |(a, b)| (Mask::from_bits(d, &a).unwrap(), Mask::from_bits(d, &b).unwrap()))
    })
}

proptest! {
    #[test]
    fn boundary_f_matches_all_pairs((a, b) in mask_pair(), tol in 0u32..4) {
        let f = boundary_f(&a, &b, tol).unwrap();
        prop_assert!((f - oracle_f(&a, &b, tol)).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn boundary_f_monotone_in_tolerance((a, b) in mask_pair()) {
        let mut last = 0.0;
        for tol in 0..6 {
            let f = boundary_f(&a, &b, tol).unwrap();
            prop_assert!(f >= last);
            last = f;
        }
        if !a.is_empty() && !b.is_empty() {
            prop_assert_eq!(boundary_f(&a, &b, 64).unwrap(), 1.0);
        }
    }

    #[test]
    fn jf_invariant_under_common_translation((a, b) in mask_pair(), dx in 1i64..4, dy in 1i64..4) {
        // Pad so nothing leaves the frame.
        let d = Dims::new(a.width() + 8, a.height() + 8);
        let embed = |m: &Mask| Mask::from_fn(d, |x, y| x < m.width() && y < m.height() && m.get(x, y));
        let (pa, pb) = (embed(&a), embed(&b));
        let (ta, tb) = (pa.translate(dx, dy), pb.translate(dx, dy));
        prop_assert_eq!(oracle_iou(&pa, &pb), oracle_iou(&ta, &tb));
        prop_assert_eq!(boundary_f(&pa, &pb, 1).unwrap(), boundary_f(&ta, &tb, 1).unwrap());
    }

    #[test]
    fn eval_identity_is_perfect(seqs in proptest::collection::vec(proptest::bool::ANY, 1..12)) {
        let d = Dims::new(6, 5);
        let blob = Mask::from_fn(d, |x, y| (1..4).contains(&x) && (1..3).contains(&y));
        let gt: Vec<Mask> = seqs.iter().map(|p| if *p { blob.clone() } else { Mask::empty(d) }).collect();
        let mut set = BTreeMap::new();
        set.insert("o".to_string(), gt);
        let r = evaluate(&set, &set, &MetricsConfig::default()).unwrap();
        for v in r.scores.columns().into_iter().flatten() {
            prop_assert_eq!(v, 1.0);
        }
        let disappears = reference_phases(&seqs).contains(&Phase::Disappeared);
        prop_assert_eq!(r.scores.jf_disappear.is_some(), disappears);
    }
}
