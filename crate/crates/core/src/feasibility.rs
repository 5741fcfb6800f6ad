//! Score normalization, threshold calibration on validation images and
//! label-space filtering.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{EvalError, ScoreMatrix};
use crate::labelspace::{read_pairs, write_pairs, LabelSpaceError, Pair, PairSpace};
use crate::table::{FeasibilityTable, Method, TableError, SEEN_SENTINEL};

#[derive(Debug, Error)]
pub enum FeasibilityError {
    #[error("feasibility table has no non-seen scores")]
    EmptyTable,
    #[error("no validation images")]
    NoValidationImages,
    #[error("validation image {image_id} is labeled {pair}, which is not a validation unseen pair")]
    NotValidationLabel { image_id: String, pair: Pair },
    #[error("candidate set does not contain seen pair {0}")]
    MissingSeen(Pair),
    #[error("pair {0} is not in the label space")]
    UnknownPair(Pair),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    LabelSpace(#[from] LabelSpaceError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn is_scored(x: f64) -> bool {
    x.is_finite()
}

/// The affine map applied by [`normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    /// Maps a raw score or threshold into normalized units. When all
    /// scores are equal the map is the step 0 / 0.5 / 1 around that value,
    /// which keeps filtering decisions unchanged.
    pub fn apply(&self, x: f64) -> f64 {
        if !is_scored(x) {
            return x;
        }
        if self.max > self.min {
            (x - self.min) / (self.max - self.min)
        } else if x < self.min {
            0.0
        } else if x > self.min {
            1.0
        } else {
            0.5
        }
    }
}

/// Min-max normalization over the finite, non-sentinel scores.
pub fn normalize(table: &FeasibilityTable) -> Result<FeasibilityTable, FeasibilityError> {
    normalize_with_map(table).map(|(t, _)| t)
}

pub fn normalize_with_map(table: &FeasibilityTable) -> Result<(FeasibilityTable, MinMax), FeasibilityError> {
    if table.is_empty() {
        return Err(TableError::Empty.into());
    }
    let mut scored = table.entries().iter().map(|e| e.score).filter(|&x| is_scored(x));
    let Some(first) = scored.next() else {
        return Err(FeasibilityError::EmptyTable);
    };
    let (min, max) = scored.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let map = MinMax { min, max };
    let mut out = table.clone();
    for e in out.entries_mut() {
        e.score = map.apply(e.score);
    }
    out.normalized = true;
    Ok((out, map))
}

/// The filtered label space. Always contains every seen pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    mask: Vec<bool>,
    indices: Vec<usize>,
    pub source_tau: f64,
}

impl CandidateSet {
    /// Builds a set from enumeration indices; seen pairs are added.
    pub fn from_indices(space: &PairSpace, indices: impl IntoIterator<Item = usize>, source_tau: f64) -> Self {
        let mut mask = vec![false; space.all_count()];
        for &i in space.seen_indices() {
            mask[i] = true;
        }
        for i in indices {
            mask[i] = true;
        }
        let indices = (0..mask.len()).filter(|&i| mask[i]).collect();
        CandidateSet {
            mask,
            indices,
            source_tau,
        }
    }

    /// Every pair of the space.
    pub fn all(space: &PairSpace) -> Self {
        Self::from_indices(space, 0..space.all_count(), f64::NEG_INFINITY)
    }

    /// Size of the label space the set is drawn from.
    pub fn universe(&self) -> usize {
        self.mask.len()
    }

    /// Member enumeration indices, ascending.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains_index(&self, idx: usize) -> bool {
        self.mask.get(idx).copied().unwrap_or(false)
    }

    pub fn contains(&self, space: &PairSpace, pair: &Pair) -> bool {
        space.index_of(pair).is_some_and(|i| self.contains_index(i))
    }

    pub fn always_contains_seen(&self) -> bool {
        true
    }

    pub fn pairs(&self, space: &PairSpace) -> Vec<Pair> {
        self.indices.iter().map(|&i| space.pair_at(i)).collect()
    }

    /// Writes the members in the `seen.tsv` format, enumeration order.
    pub fn write_tsv(&self, path: impl AsRef<Path>, space: &PairSpace) -> Result<(), FeasibilityError> {
        write_pairs(path.as_ref(), self.pairs(space).iter())?;
        Ok(())
    }

    /// Reads a pairs TSV; seen pairs must be present.
    pub fn read_tsv(path: impl AsRef<Path>, space: &PairSpace, source_tau: f64) -> Result<Self, FeasibilityError> {
        let pairs = read_pairs(path.as_ref())?;
        let mut indices = Vec::with_capacity(pairs.len());
        for p in pairs {
            indices.push(space.index_of(&p).ok_or(FeasibilityError::UnknownPair(p))?);
        }
        let mut present = vec![false; space.all_count()];
        for &i in &indices {
            present[i] = true;
        }
        if let Some(&missing) = space.seen_indices().iter().find(|&&i| !present[i]) {
            return Err(FeasibilityError::MissingSeen(space.pair_at(missing)));
        }
        Ok(CandidateSet::from_indices(space, indices, source_tau))
    }
}

/// Y_seen together with every pair scored at or above `tau`.
pub fn filter(space: &PairSpace, table: &FeasibilityTable, tau: f64) -> Result<CandidateSet, FeasibilityError> {
    let scores = table.aligned_scores(space)?;
    Ok(CandidateSet::from_indices(
        space,
        (0..scores.len()).filter(|&i| scores[i] >= tau),
        tau,
    ))
}

/// Outcome of the threshold search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub tau: f64,
    /// Ascending.
    pub candidate_taus: Vec<f64>,
    /// Validation unseen accuracy for each candidate, same order.
    pub val_unseen_accuracy: Vec<f64>,
    pub method: Method,
}

impl CalibrationResult {
    pub fn accuracy_at(&self, tau: f64) -> Option<f64> {
        self.candidate_taus
            .iter()
            .position(|&t| t == tau)
            .map(|i| self.val_unseen_accuracy[i])
    }

    pub fn best_accuracy(&self) -> f64 {
        self.accuracy_at(self.tau).expect("tau is a candidate")
    }

    /// `tau,val_unseen_accuracy,chosen`, one row per candidate.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), FeasibilityError> {
        let path = path.as_ref();
        let mut body = String::from("tau,val_unseen_accuracy,chosen\n");
        for (t, a) in self.candidate_taus.iter().zip(&self.val_unseen_accuracy) {
            body.push_str(&format!("{t:?},{a:?},{}\n", u8::from(*t == self.tau)));
        }
        fs::write(path, body).map_err(|source| FeasibilityError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), FeasibilityError> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(self).expect("calibration result serializes") + "\n";
        fs::write(path, body).map_err(|source| FeasibilityError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self, FeasibilityError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| FeasibilityError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| FeasibilityError::Io {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        })
    }
}

/// Candidate thresholds: one below the smallest score, then the midpoints
/// between consecutive distinct scores.
pub fn candidate_taus(table: &FeasibilityTable) -> Vec<f64> {
    let mut s: Vec<f64> = table
        .entries()
        .iter()
        .map(|e| e.score)
        .filter(|&x| is_scored(x))
        .collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let Some(&lo) = s.first() else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(s.len());
    out.push(lo - 1.0);
    out.extend(s.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    out
}

/// Picks the threshold with the best validation unseen accuracy, the
/// smallest one on ties. Images are classified by plain argmax over the
/// filtered candidates, lowest pair index on score ties.
///
/// Each image is correct exactly for thresholds in a half-open interval
/// (a, b]: b is the score of its true pair and a the highest score among
/// the pairs that would beat it, so accuracy at every candidate is a
/// difference of two counts.
pub fn select_threshold(
    table: &FeasibilityTable,
    space: &PairSpace,
    val_matrix: &ScoreMatrix,
) -> Result<CalibrationResult, FeasibilityError> {
    if val_matrix.n_images() == 0 {
        return Err(FeasibilityError::NoValidationImages);
    }
    val_matrix.check_space(space)?;
    let val_unseen = space.val_unseen_indices();
    if !val_unseen.is_empty() {
        for (im, &t) in val_matrix.images().iter().zip(val_matrix.true_indices()) {
            if val_unseen.binary_search(&t).is_err() {
                return Err(FeasibilityError::NotValidationLabel {
                    image_id: im.image_id.clone(),
                    pair: im.true_pair.clone(),
                });
            }
        }
    }
    let g = table.aligned_scores(space)?;
    let taus = candidate_taus(table);
    if taus.is_empty() {
        return Err(FeasibilityError::EmptyTable);
    }

    let mut lows = Vec::new();
    let mut highs = Vec::new();
    for i in 0..val_matrix.n_images() {
        let row = val_matrix.row(i);
        let t = val_matrix.true_indices()[i];
        let high = if space.is_seen_index(t) { SEEN_SENTINEL } else { g[t] };
        if high.is_nan() {
            continue;
        }
        let mut low = f64::NEG_INFINITY;
        let mut blocked = false;
        for (j, &s) in row.iter().enumerate() {
            let beats = s > row[t] || (s == row[t] && j < t);
            if !beats {
                continue;
            }
            if space.is_seen_index(j) {
                blocked = true;
                break;
            }
            if !g[j].is_nan() {
                low = low.max(g[j]);
            }
        }
        if !blocked && low < high {
            lows.push(low);
            highs.push(high);
        }
    }
    lows.sort_by(f64::total_cmp);
    highs.sort_by(f64::total_cmp);

    let n = val_matrix.n_images() as f64;
    let accuracy: Vec<f64> = taus
        .iter()
        .map(|&tau| {
            let high_ok = highs.len() - highs.partition_point(|&b| b < tau);
            let low_bad = lows.len() - lows.partition_point(|&a| a < tau);
            (high_ok - low_bad) as f64 / n
        })
        .collect();
    let mut best = 0;
    for (k, &a) in accuracy.iter().enumerate() {
        if a > accuracy[best] {
            best = k;
        }
    }
    Ok(CalibrationResult {
        tau: taus[best],
        candidate_taus: taus,
        val_unseen_accuracy: accuracy,
        method: table.method,
    })
}
