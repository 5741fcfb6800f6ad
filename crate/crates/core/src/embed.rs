//! Word-embedding feasibility baselines (GloVe- and ConceptNet-style).
//!
//! A pair is scored by how similar its state is to the states seen with its
//! object, and how similar its object is to the objects seen with its state.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelspace::{Pair, PairSpace};
use crate::table::{FeasibilityTable, Method, Provenance, TableEntry, SEEN_SENTINEL};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no embedding for {0:?}")]
    OutOfVocabulary(String),
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("embedding file {0} holds no vectors")]
    Empty(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OovPolicy {
    ZeroVector,
    Error,
}

/// How the similarities within one side are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideReduction {
    #[default]
    Max,
    Mean,
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::DimensionMismatch(u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
    pub oov_policy: OovPolicy,
}

impl EmbeddingSet {
    pub fn new(dimension: usize, oov_policy: OovPolicy) -> Self {
        assert!(dimension >= 1, "embedding dimension must be positive");
        EmbeddingSet {
            dimension,
            vectors: HashMap::new(),
            oov_policy,
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<(), EmbeddingError> {
        if vector.len() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch(self.dimension, vector.len()));
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Multiplies every vector by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        EmbeddingSet {
            dimension: self.dimension,
            vectors: self
                .vectors
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|x| x * c).collect()))
                .collect(),
            oov_policy: self.oov_policy,
        }
    }

    /// Loads a `token v1 ... vD` text file. A leading `count dim` header
    /// line is skipped. With `keep`, only those tokens are retained.
    pub fn load(
        path: impl AsRef<Path>,
        oov_policy: OovPolicy,
        keep: Option<&HashSet<String>>,
    ) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let io_err = |source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io_err)?);
        let mut dimension = None;
        let mut vectors = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let Some(token) = fields.next() else { continue };
            let rest: Vec<&str> = fields.collect();
            if i == 0 && rest.len() == 1 && token.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
                continue;
            }
            if keep.is_some_and(|k| !k.contains(token)) {
                continue;
            }
            let parse_err = |reason: String| EmbeddingError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let values = rest
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| parse_err(format!("bad component {f:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if values.is_empty() {
                return Err(parse_err("token without components".into()));
            }
            match dimension {
                None => dimension = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(parse_err(format!("expected {d} components, found {}", values.len())))
                }
                _ => {}
            }
            vectors.insert(token.to_string(), values);
        }
        let dimension = dimension.ok_or_else(|| EmbeddingError::Empty(path.to_path_buf()))?;
        Ok(EmbeddingSet {
            dimension,
            vectors,
            oov_policy,
        })
    }

    /// Tokens a lookup of `primitive` may touch: the primitive itself, its
    /// underscore-joined form and its individual words.
    pub fn lookup_keys(primitive: &str) -> Vec<String> {
        let mut keys = vec![primitive.to_string(), primitive.replace(' ', "_")];
        keys.extend(primitive.split_whitespace().map(str::to_string));
        keys.dedup();
        keys
    }

    /// Vector for a primitive. Multi-word primitives try the
    /// underscore-joined token first, then average their words.
    pub fn resolve(&self, primitive: &str) -> Result<Vec<f64>, EmbeddingError> {
        if let Some(v) = self.get(primitive) {
            return Ok(v.to_vec());
        }
        let joined = primitive.replace(' ', "_");
        if let Some(v) = self.get(&joined) {
            return Ok(v.to_vec());
        }
        let words: Vec<&str> = primitive.split_whitespace().collect();
        if words.len() > 1 {
            let mut sum = vec![0.0; self.dimension];
            for w in &words {
                let v = match self.get(w) {
                    Some(v) => v,
                    None => match self.oov_policy {
                        OovPolicy::Error => return Err(EmbeddingError::OutOfVocabulary(w.to_string())),
                        OovPolicy::ZeroVector => continue,
                    },
                };
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += x;
                }
            }
            let n = words.len() as f64;
            return Ok(sum.into_iter().map(|x| x / n).collect());
        }
        match self.oov_policy {
            OovPolicy::Error => Err(EmbeddingError::OutOfVocabulary(primitive.to_string())),
            OovPolicy::ZeroVector => Ok(vec![0.0; self.dimension]),
        }
    }
}

fn reduce(values: impl Iterator<Item = f64>, how: SideReduction) -> f64 {
    let (mut n, mut sum, mut max) = (0usize, 0.0, f64::NEG_INFINITY);
    for v in values {
        n += 1;
        sum += v;
        max = max.max(v);
    }
    match (n, how) {
        (0, _) => 0.0,
        (_, SideReduction::Max) => max,
        (_, SideReduction::Mean) => sum / n as f64,
    }
}

/// Primitive vectors resolved once for a whole space.
struct Resolved {
    states: HashMap<String, Vec<f64>>,
    objects: HashMap<String, Vec<f64>>,
}

impl Resolved {
    fn new(space: &PairSpace, emb: &EmbeddingSet) -> Result<Self, EmbeddingError> {
        let resolve_all = |tokens: &[String]| {
            tokens
                .iter()
                .map(|t| emb.resolve(t).map(|v| (t.clone(), v)))
                .collect::<Result<HashMap<_, _>, _>>()
        };
        Ok(Resolved {
            states: resolve_all(space.states())?,
            objects: resolve_all(space.objects())?,
        })
    }

    fn score(&self, space: &PairSpace, query: &Pair, how: SideReduction) -> f64 {
        let qs = &self.states[&query.state];
        let qo = &self.objects[&query.object];
        let rho_obj = reduce(
            space
                .seen_states_with_object(&query.object)
                .into_iter()
                .map(|s| cosine(qs, &self.states[s]).expect("equal dimensions")),
            how,
        );
        let rho_state = reduce(
            space
                .seen_objects_with_state(&query.state)
                .into_iter()
                .map(|o| cosine(qo, &self.objects[o]).expect("equal dimensions")),
            how,
        );
        (rho_obj + rho_state) / 2.0
    }
}

/// Feasibility of one pair: the mean of the object-side and state-side
/// similarities, each reduced with `how` (max by default). A side with no
/// seen co-occurrences contributes 0.
pub fn primitive_feasibility(
    space: &PairSpace,
    emb: &EmbeddingSet,
    query: &Pair,
    how: SideReduction,
) -> Result<f64, EmbeddingError> {
    let qs = emb.resolve(&query.state)?;
    let qo = emb.resolve(&query.object)?;
    let mut obj_side = Vec::new();
    for s in space.seen_states_with_object(&query.object) {
        obj_side.push(cosine(&qs, &emb.resolve(s)?)?);
    }
    let mut state_side = Vec::new();
    for o in space.seen_objects_with_state(&query.state) {
        state_side.push(cosine(&qo, &emb.resolve(o)?)?);
    }
    Ok((reduce(obj_side.into_iter(), how) + reduce(state_side.into_iter(), how)) / 2.0)
}

/// Baseline table over the whole space; seen pairs get the seen sentinel.
pub fn baseline_table(
    space: &PairSpace,
    emb: &EmbeddingSet,
    method: Method,
    how: SideReduction,
) -> Result<FeasibilityTable, EmbeddingError> {
    let resolved = Resolved::new(space, emb)?;
    let entries = (0..space.all_count())
        .into_par_iter()
        .map(|idx| {
            let pair = space.pair_at(idx);
            if space.is_seen_index(idx) {
                TableEntry {
                    pair,
                    score: SEEN_SENTINEL,
                    provenance: Provenance::Seen,
                }
            } else {
                let score = resolved.score(space, &pair, how);
                TableEntry {
                    pair,
                    score,
                    provenance: Provenance::Embedding,
                }
            }
        })
        .collect();
    Ok(FeasibilityTable::new(entries, method, false))
}

/// Every token a space could need from an embedding file.
pub fn vocabulary(space: &PairSpace) -> HashSet<String> {
    space
        .states()
        .iter()
        .chain(space.objects())
        .flat_map(|t| EmbeddingSet::lookup_keys(t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_cases() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[2.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(EmbeddingError::DimensionMismatch(1, 2))
        ));
    }

    fn space() -> PairSpace {
        let p = |s: &str, o: &str| Pair::new(s, o).unwrap();
        PairSpace::new(
            vec!["red".into(), "blue".into(), "lonely".into()],
            vec!["apple".into(), "car".into()],
            vec![p("red", "apple")],
            vec![p("blue", "car")],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn self_similarity_and_empty_sides() {
        let sp = space();
        let mut emb = EmbeddingSet::new(2, OovPolicy::Error);
        for (t, v) in [("red", [1.0, 0.0]), ("blue", [0.6, 0.8]), ("lonely", [0.0, 1.0]), ("apple", [1.0, 1.0]), ("car", [1.0, -1.0])] {
            emb.insert(t, v.to_vec()).unwrap();
        }
        let red_apple = Pair::new("red", "apple").unwrap();
        let v = primitive_feasibility(&sp, &emb, &red_apple, SideReduction::Max).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        // neither "blue" nor "car" occurs in a seen pair
        let blue_car = Pair::new("blue", "car").unwrap();
        assert_eq!(primitive_feasibility(&sp, &emb, &blue_car, SideReduction::Max).unwrap(), 0.0);
    }

    #[test]
    fn oov_policies() {
        let sp = space();
        let mut emb = EmbeddingSet::new(2, OovPolicy::Error);
        emb.insert("red", vec![1.0, 0.0]).unwrap();
        let q = Pair::new("red", "apple").unwrap();
        assert!(matches!(
            primitive_feasibility(&sp, &emb, &q, SideReduction::Max),
            Err(EmbeddingError::OutOfVocabulary(_))
        ));
        emb.oov_policy = OovPolicy::ZeroVector;
        assert!(primitive_feasibility(&sp, &emb, &q, SideReduction::Max).is_ok());
    }

    #[test]
    fn multi_word_resolution() {
        let mut emb = EmbeddingSet::new(2, OovPolicy::Error);
        emb.insert("faux", vec![1.0, 0.0]).unwrap();
        emb.insert("fur", vec![0.0, 1.0]).unwrap();
        assert_eq!(emb.resolve("faux fur").unwrap(), vec![0.5, 0.5]);
        emb.insert("faux_fur", vec![2.0, 2.0]).unwrap();
        assert_eq!(emb.resolve("faux fur").unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn load_text_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        std::fs::write(&path, "3 2\nred 1 0\nblue 0.5 0.5\nextra 9 9\n").unwrap();
        let keep: HashSet<String> = ["red", "blue"].iter().map(|s| s.to_string()).collect();
        let emb = EmbeddingSet::load(&path, OovPolicy::Error, Some(&keep)).unwrap();
        assert_eq!(emb.len(), 2);
        assert_eq!(emb.dimension(), 2);
        std::fs::write(&path, "red 1 0\nblue 0.5\n").unwrap();
        assert!(matches!(
            EmbeddingSet::load(&path, OovPolicy::Error, None),
            Err(EmbeddingError::Parse { line: 2, .. })
        ));
    }
}
