//! Feasibility scores for every pair of a label space.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelspace::{Pair, PairSpace};

/// Score given to seen pairs. Survives every threshold.
pub const SEEN_SENTINEL: f64 = f64::INFINITY;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("feasibility table is empty")]
    Empty,
    #[error("table does not cover the label space: {0}")]
    Coverage(String),
    #[error("pair {0} is not in the table")]
    UnknownPair(Pair),
    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FlmLogit,
    FlmBinary,
    FlmQaScore,
    Glove,
    Conceptnet,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::FlmLogit => "flm_logit",
            Method::FlmBinary => "flm_binary",
            Method::FlmQaScore => "flm_qa_score",
            Method::Glove => "glove",
            Method::Conceptnet => "conceptnet",
        }
    }

    pub fn is_llm(&self) -> bool {
        matches!(self, Method::FlmLogit | Method::FlmBinary | Method::FlmQaScore)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "flm_logit" => Ok(Method::FlmLogit),
            "flm_binary" => Ok(Method::FlmBinary),
            "flm_qa_score" => Ok(Method::FlmQaScore),
            "glove" => Ok(Method::Glove),
            "conceptnet" => Ok(Method::Conceptnet),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

/// How an entry's score was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Seen pair, never scored.
    Seen,
    /// Scored with the requested prompt.
    Llm,
    /// Guided prompt had no guidance pairs; scored with the canonical prompt.
    CanonicalFallback,
    Embedding,
    /// Scoring failed; the score is NaN.
    Failed,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Seen => "seen",
            Provenance::Llm => "llm",
            Provenance::CanonicalFallback => "canonical-fallback",
            Provenance::Embedding => "embedding",
            Provenance::Failed => "failed",
        }
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seen" => Ok(Provenance::Seen),
            "llm" => Ok(Provenance::Llm),
            "canonical-fallback" => Ok(Provenance::CanonicalFallback),
            "embedding" => Ok(Provenance::Embedding),
            "failed" => Ok(Provenance::Failed),
            other => Err(format!("unknown provenance {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub pair: Pair,
    pub score: f64,
    pub provenance: Provenance,
}

/// Feasibility score per pair, in the label space's enumeration order.
#[derive(Debug, Clone)]
pub struct FeasibilityTable {
    entries: Vec<TableEntry>,
    index: HashMap<Pair, usize>,
    pub method: Method,
    pub normalized: bool,
}

impl PartialEq for FeasibilityTable {
    fn eq(&self, other: &Self) -> bool {
        self.method == other.method
            && self.normalized == other.normalized
            && self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.pair == b.pair
                    && a.provenance == b.provenance
                    && a.score.to_bits() == b.score.to_bits()
            })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    state: String,
    object: String,
    score: String,
    method: String,
    provenance: String,
}

impl FeasibilityTable {
    pub fn new(entries: Vec<TableEntry>, method: Method, normalized: bool) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.pair.clone(), i))
            .collect();
        FeasibilityTable {
            entries,
            index,
            method,
            normalized,
        }
    }

    /// Builds a table over `space` from one score per enumeration index.
    /// Seen pairs receive the sentinel regardless of the given score.
    pub fn from_scores(space: &PairSpace, scores: &[f64], method: Method, provenance: Provenance) -> Self {
        assert_eq!(scores.len(), space.all_count());
        let entries = space
            .enumerate_all()
            .into_iter()
            .zip(scores)
            .enumerate()
            .map(|(i, (pair, &score))| {
                if space.is_seen_index(i) {
                    TableEntry {
                        pair,
                        score: SEEN_SENTINEL,
                        provenance: Provenance::Seen,
                    }
                } else {
                    TableEntry {
                        pair,
                        score,
                        provenance,
                    }
                }
            })
            .collect();
        FeasibilityTable::new(entries, method, false)
    }

    pub fn entries(&self) -> &[TableEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [TableEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, pair: &Pair) -> Option<f64> {
        self.index.get(pair).map(|&i| self.entries[i].score)
    }

    pub fn score(&self, pair: &Pair) -> Result<f64, TableError> {
        self.get(pair).ok_or_else(|| TableError::UnknownPair(pair.clone()))
    }

    pub fn entry(&self, pair: &Pair) -> Option<&TableEntry> {
        self.index.get(pair).map(|&i| &self.entries[i])
    }

    /// Scores aligned with `space.enumerate_all()`.
    pub fn aligned_scores(&self, space: &PairSpace) -> Result<Vec<f64>, TableError> {
        self.check_covers(space)?;
        let mut out = vec![0.0; space.all_count()];
        for e in &self.entries {
            // covered, so the lookup succeeds
            let i = space.index_of(&e.pair).expect("pair in space");
            out[i] = e.score;
        }
        Ok(out)
    }

    /// Checks that the table holds exactly the pairs of `space`.
    pub fn check_covers(&self, space: &PairSpace) -> Result<(), TableError> {
        if self.entries.len() != space.all_count() {
            return Err(TableError::Coverage(format!(
                "{} entries for {} pairs",
                self.entries.len(),
                space.all_count()
            )));
        }
        for e in &self.entries {
            if !space.contains(&e.pair) {
                return Err(TableError::Coverage(format!("pair {} not in space", e.pair)));
            }
        }
        Ok(())
    }

    /// Pairs whose scoring failed.
    pub fn failed_pairs(&self) -> Vec<&Pair> {
        self.entries
            .iter()
            .filter(|e| e.provenance == Provenance::Failed)
            .map(|e| &e.pair)
            .collect()
    }

    /// Writes `state,object,score,method,provenance`; the seen sentinel is
    /// written as `inf`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TableError> {
        let path = path.as_ref();
        let csv_err = |source| TableError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for e in &self.entries {
            w.serialize(CsvRow {
                state: e.pair.state.clone(),
                object: e.pair.object.clone(),
                score: format_score(e.score),
                method: self.method.as_str().to_string(),
                provenance: e.provenance.as_str().to_string(),
            })
            .map_err(csv_err)?;
        }
        w.flush().map_err(|source| TableError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads a table CSV. The normalized flag is set when every non-sentinel
    /// score lies in `[0, 1]`.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, TableError> {
        let path = path.as_ref();
        let parse_err = |line: usize, reason: String| TableError::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut r = csv::Reader::from_path(path).map_err(|source| TableError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let mut entries = Vec::new();
        let mut method = None;
        for (i, row) in r.deserialize::<CsvRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|source| TableError::Csv {
                path: path.to_path_buf(),
                source,
            })?;
            let m: Method = row.method.parse().map_err(|e| parse_err(line, e))?;
            match method {
                None => method = Some(m),
                Some(prev) if prev != m => {
                    return Err(parse_err(line, format!("mixed methods {prev} and {m}")))
                }
                _ => {}
            }
            let score: f64 = row
                .score
                .parse()
                .map_err(|_| parse_err(line, format!("bad score {:?}", row.score)))?;
            let provenance = row.provenance.parse().map_err(|e| parse_err(line, e))?;
            let pair = Pair::new(row.state, row.object).map_err(|e| parse_err(line, e.to_string()))?;
            entries.push(TableEntry {
                pair,
                score,
                provenance,
            });
        }
        let method = method.ok_or(TableError::Empty)?;
        let normalized = entries
            .iter()
            .filter(|e| e.score.is_finite())
            .all(|e| (0.0..=1.0).contains(&e.score));
        Ok(FeasibilityTable::new(entries, method, normalized))
    }
}

/// Shortest round-trip decimal, `inf` for the sentinel.
pub fn format_score(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".to_string()
    } else if x == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{x:?}")
    }
}
