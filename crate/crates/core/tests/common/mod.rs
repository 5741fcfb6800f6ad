//! Random instance builders and brute-force oracles shared by the
//! integration tests.
#![allow(dead_code)]

use flab_core::eval::{ImageRecord, ScoreMatrix};
use flab_core::labelspace::{Pair, PairSpace};
use flab_core::table::{FeasibilityTable, Method, Provenance};
use rand::Rng;

pub fn pair(s: &str, o: &str) -> Pair {
    Pair::new(s, o).unwrap()
}

/// `n_states` x `n_objects` space named s0.. / o0..; `split[i]` is 0 for
/// confusing, 1 for seen, 2 for unseen, in enumeration order.
pub fn space_from_split(n_states: usize, n_objects: usize, split: &[u8]) -> PairSpace {
    let states: Vec<String> = (0..n_states).map(|i| format!("s{i}")).collect();
    let objects: Vec<String> = (0..n_objects).map(|i| format!("o{i}")).collect();
    let mut seen = Vec::new();
    let mut unseen = Vec::new();
    for (i, &k) in split.iter().enumerate() {
        let p = pair(&states[i / n_objects], &objects[i % n_objects]);
        match k {
            1 => seen.push(p),
            2 => unseen.push(p),
            _ => {}
        }
    }
    PairSpace::new(states, objects, seen, unseen, Vec::new()).unwrap()
}

/// A random space with at least one seen and one unseen pair.
pub fn random_space<R: Rng>(rng: &mut R, max_states: usize, max_objects: usize) -> PairSpace {
    loop {
        let ns = rng.gen_range(1..=max_states);
        let no = rng.gen_range(1..=max_objects);
        let split: Vec<u8> = (0..ns * no).map(|_| rng.gen_range(0..3)).collect();
        if split.contains(&1) && split.contains(&2) {
            return space_from_split(ns, no, &split);
        }
    }
}

/// Random matrix with scores on the k/64 grid in [0, 1]. Labels come from
/// seen and unseen pairs, at least one of each.
pub fn random_matrix<R: Rng>(rng: &mut R, space: &PairSpace, n_images: usize) -> ScoreMatrix {
    let n = space.all_count();
    let seen = space.seen_indices();
    let unseen = space.unseen_indices();
    let mut images = Vec::new();
    for k in 0..n_images.max(2) {
        let t = match k {
            0 => seen[rng.gen_range(0..seen.len())],
            1 => unseen[rng.gen_range(0..unseen.len())],
            _ if rng.gen_bool(0.5) => seen[rng.gen_range(0..seen.len())],
            _ => unseen[rng.gen_range(0..unseen.len())],
        };
        images.push(ImageRecord {
            image_id: format!("img{k}"),
            true_pair: space.pair_at(t),
        });
    }
    let scores = (0..images.len() * n)
        .map(|_| rng.gen_range(0..=64) as f32 / 64.0)
        .collect();
    ScoreMatrix::new(space.enumerate_all(), images, scores).unwrap()
}

/// Random table with scores on the k/16 grid in [0, 1], seen pairs at +inf.
pub fn random_table<R: Rng>(rng: &mut R, space: &PairSpace) -> FeasibilityTable {
    let scores: Vec<f64> = (0..space.all_count())
        .map(|_| rng.gen_range(0..=16) as f64 / 16.0)
        .collect();
    let mut t = FeasibilityTable::from_scores(space, &scores, Method::FlmLogit, Provenance::Llm);
    t.normalized = true;
    t
}

/// Per-image argmax over a candidate mask, lowest index on ties.
pub fn oracle_predict(matrix: &ScoreMatrix, mask: &[bool], bias: f64, space: &PairSpace) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..matrix.n_images() {
        let row = matrix.row(i);
        let mut best: Option<usize> = None;
        let mut best_score = 0.0;
        for j in 0..row.len() {
            if !mask[j] {
                continue;
            }
            let s = row[j] as f64 - if space.is_seen_index(j) { bias } else { 0.0 };
            if best.is_none() || s > best_score {
                best = Some(j);
                best_score = s;
            }
        }
        out.push(best.unwrap());
    }
    out
}

pub fn oracle_harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Area under the non-dominated (seen, unseen) points, x100, with the
/// leftmost point extended flat to seen = 0. Quadratic dominance check.
pub fn oracle_auc(points: &[(f64, f64)]) -> f64 {
    let mut distinct: Vec<(f64, f64)> = Vec::new();
    for &p in points {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    let mut front: Vec<(f64, f64)> = Vec::new();
    for &p in &distinct {
        let dominated = distinct
            .iter()
            .any(|&q| q != p && q.0 >= p.0 && q.1 >= p.1);
        if !dominated && !front.contains(&p) {
            front.push(p);
        }
    }
    front.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut area = front[0].0 * front[0].1;
    for k in 1..front.len() {
        area += (front[k].0 - front[k - 1].0) * (front[k].1 + front[k - 1].1) * 0.5;
    }
    100.0 * area
}

pub struct DenseSweep {
    pub seen: f64,
    pub unseen: f64,
    pub harmonic: f64,
    pub auc: f64,
}

/// Brute-force sweep over 10,001 evenly spaced biases covering every
/// margin of a k/64 matrix in [0, 1]. The small irrational offset keeps
/// grid biases off the exact margins.
pub fn dense_sweep(matrix: &ScoreMatrix, mask: &[bool], space: &PairSpace) -> DenseSweep {
    let lo = -1.1 - std::f64::consts::PI * 1e-7;
    let hi = 1.1 + std::f64::consts::PI * 1e-7;
    let n_seen = matrix
        .true_indices()
        .iter()
        .filter(|&&t| space.is_seen_index(t))
        .count() as f64;
    let n_unseen = matrix.n_images() as f64 - n_seen;
    let seen_flag: Vec<bool> = (0..space.all_count()).map(|j| space.is_seen_index(j)).collect();
    let rows: Vec<Vec<f64>> = (0..matrix.n_images())
        .map(|i| matrix.row(i).iter().map(|&x| x as f64).collect())
        .collect();
    let mut points = Vec::with_capacity(10_001);
    for k in 0..=10_000 {
        let bias = lo + (hi - lo) * k as f64 / 10_000.0;
        let (mut cs, mut cu) = (0.0, 0.0);
        for (row, &t) in rows.iter().zip(matrix.true_indices()) {
            let mut best = usize::MAX;
            let mut best_score = f64::NEG_INFINITY;
            for j in 0..row.len() {
                if !mask[j] {
                    continue;
                }
                let s = if seen_flag[j] { row[j] - bias } else { row[j] };
                if best == usize::MAX || s > best_score {
                    best = j;
                    best_score = s;
                }
            }
            if best == t {
                if seen_flag[t] {
                    cs += 1.0;
                } else {
                    cu += 1.0;
                }
            }
        }
        points.push((cs / n_seen, cu / n_unseen));
    }
    DenseSweep {
        seen: points.iter().map(|p| p.0).fold(0.0, f64::max),
        unseen: points.iter().map(|p| p.1).fold(0.0, f64::max),
        harmonic: points.iter().map(|p| oracle_harmonic(p.0, p.1)).fold(0.0, f64::max),
        auc: oracle_auc(&points),
    }
}

/// Every threshold worth trying for a table: each distinct finite score,
/// the midpoints, and values outside the range.
pub fn oracle_thresholds(table: &FeasibilityTable) -> Vec<f64> {
    let mut s: Vec<f64> = table
        .entries()
        .iter()
        .map(|e| e.score)
        .filter(|x| x.is_finite())
        .collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s.dedup();
    let mut out = vec![s[0] - 1.0];
    for w in s.windows(2) {
        out.push((w[0] + w[1]) / 2.0);
    }
    out
}

/// Validation unseen accuracy at `tau` by explicit filtering and argmax.
pub fn oracle_val_accuracy(table: &FeasibilityTable, space: &PairSpace, matrix: &ScoreMatrix, tau: f64) -> f64 {
    let mask: Vec<bool> = space
        .enumerate_all()
        .iter()
        .enumerate()
        .map(|(i, p)| space.is_seen_index(i) || table.get(p).unwrap() >= tau)
        .collect();
    let pred = oracle_predict(matrix, &mask, 0.0, space);
    let correct = pred
        .iter()
        .zip(matrix.true_indices())
        .filter(|(p, t)| p == t)
        .count();
    correct as f64 / matrix.n_images() as f64
}

/// Validation matrix: every image labeled with an unseen pair.
pub fn random_val_matrix<R: Rng>(rng: &mut R, space: &PairSpace, n_images: usize) -> ScoreMatrix {
    let unseen = space.unseen_indices();
    let images = (0..n_images)
        .map(|k| ImageRecord {
            image_id: format!("val{k}"),
            true_pair: space.pair_at(unseen[rng.gen_range(0..unseen.len())]),
        })
        .collect();
    let scores = (0..n_images * space.all_count())
        .map(|_| rng.gen_range(0..=64) as f32 / 64.0)
        .collect();
    ScoreMatrix::new(space.enumerate_all(), images, scores).unwrap()
}
