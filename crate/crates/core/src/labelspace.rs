//! Compositional label space: states, objects and the seen/unseen pair splits.
//!
//! A [`PairSpace`] is loaded from a dataset directory holding
//!
//! * `states.txt`, `objects.txt`: one primitive per line,
//! * `seen.tsv`, `unseen.tsv`: `state<TAB>object` per line,
//! * `val_unseen.tsv` (optional): the validation unseen split.
//!
//! File order defines the canonical ordering of primitives, and the position
//! of a pair in [`PairSpace::enumerate_all`] is its stable integer index.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATES_FILE: &str = "states.txt";
pub const OBJECTS_FILE: &str = "objects.txt";
pub const SEEN_FILE: &str = "seen.tsv";
pub const UNSEEN_FILE: &str = "unseen.tsv";
pub const VAL_UNSEEN_FILE: &str = "val_unseen.tsv";

#[derive(Debug, Error)]
pub enum LabelSpaceError {
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: malformed line: {reason}")]
    Malformed {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("{file}:{line}: duplicate entry {value:?}")]
    Duplicate {
        file: String,
        line: usize,
        value: String,
    },
    #[error("{file}:{line}: unknown {kind} {token:?}")]
    UnknownPrimitive {
        file: String,
        line: usize,
        kind: PrimitiveKind,
        token: String,
    },
    #[error("pair {0} is listed as both seen and unseen")]
    Overlap(Pair),
    #[error("validation unseen pair {0} is also a seen pair")]
    ValidationOverlap(Pair),
    #[error("invalid primitive token {0:?}")]
    InvalidToken(String),
    #[error("query references unknown {kind} {token:?}")]
    UnknownQuery { kind: PrimitiveKind, token: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveKind {
    State,
    Object,
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrimitiveKind::State => f.write_str("state"),
            PrimitiveKind::Object => f.write_str("object"),
        }
    }
}

/// A (state, object) composition, e.g. `wet fire`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub state: String,
    pub object: String,
}

impl Pair {
    /// Builds a pair, checking both tokens.
    pub fn new(state: impl Into<String>, object: impl Into<String>) -> Result<Self, LabelSpaceError> {
        let state = state.into();
        let object = object.into();
        check_token(&state)?;
        check_token(&object)?;
        Ok(Pair { state, object })
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.state, self.object)
    }
}

/// Tokens must be non-empty, lowercase, free of tabs and line breaks, and
/// carry no surrounding whitespace.
pub fn check_token(token: &str) -> Result<(), LabelSpaceError> {
    let ok = !token.is_empty()
        && !token.contains(['\t', '\n', '\r'])
        && token.trim() == token
        && token.to_lowercase() == token;
    if ok {
        Ok(())
    } else {
        Err(LabelSpaceError::InvalidToken(token.to_string()))
    }
}

/// The open-world label space and its annotated splits.
///
/// Immutable after construction. Pairs are addressed internally by their
/// enumeration index `state_pos * |O| + object_pos`.
#[derive(Debug, Clone)]
pub struct PairSpace {
    states: Vec<String>,
    objects: Vec<String>,
    state_pos: HashMap<String, usize>,
    object_pos: HashMap<String, usize>,
    seen: Vec<usize>,
    unseen: Vec<usize>,
    val_unseen: Vec<usize>,
    seen_mask: Vec<bool>,
    unseen_mask: Vec<bool>,
    // seen pair indices grouped by the primitive they contain
    seen_by_state: Vec<Vec<usize>>,
    seen_by_object: Vec<Vec<usize>>,
}

impl PairSpace {
    /// Builds and validates a space from in-memory lists.
    ///
    /// Pair lists keep their given order; duplicates and unknown primitives
    /// are rejected.
    pub fn new(
        states: Vec<String>,
        objects: Vec<String>,
        seen: Vec<Pair>,
        unseen: Vec<Pair>,
        val_unseen: Vec<Pair>,
    ) -> Result<Self, LabelSpaceError> {
        let state_pos = index_tokens(&states, "states")?;
        let object_pos = index_tokens(&objects, "objects")?;
        let mut space = PairSpace {
            seen_mask: vec![false; states.len() * objects.len()],
            unseen_mask: vec![false; states.len() * objects.len()],
            seen_by_state: vec![Vec::new(); states.len()],
            seen_by_object: vec![Vec::new(); objects.len()],
            states,
            objects,
            state_pos,
            object_pos,
            seen: Vec::new(),
            unseen: Vec::new(),
            val_unseen: Vec::new(),
        };
        space.seen = space.resolve_list(&seen, "seen")?;
        space.unseen = space.resolve_list(&unseen, "unseen")?;
        space.val_unseen = space.resolve_list(&val_unseen, "val_unseen")?;
        for &idx in &space.seen {
            space.seen_mask[idx] = true;
        }
        for &idx in &space.unseen {
            if space.seen_mask[idx] {
                return Err(LabelSpaceError::Overlap(space.pair_at(idx)));
            }
            space.unseen_mask[idx] = true;
        }
        for &idx in &space.val_unseen {
            if space.seen_mask[idx] {
                return Err(LabelSpaceError::ValidationOverlap(space.pair_at(idx)));
            }
        }
        let n_obj = space.objects.len();
        let mut sorted_seen = space.seen.clone();
        sorted_seen.sort_unstable();
        for idx in sorted_seen {
            space.seen_by_state[idx / n_obj].push(idx);
            space.seen_by_object[idx % n_obj].push(idx);
        }
        Ok(space)
    }

    fn resolve_list(&self, pairs: &[Pair], name: &str) -> Result<Vec<usize>, LabelSpaceError> {
        let mut out = Vec::with_capacity(pairs.len());
        let mut taken = HashSet::with_capacity(pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            let file = format!("{name}.tsv");
            let s = *self.state_pos.get(&pair.state).ok_or_else(|| {
                LabelSpaceError::UnknownPrimitive {
                    file: file.clone(),
                    line: i + 1,
                    kind: PrimitiveKind::State,
                    token: pair.state.clone(),
                }
            })?;
            let o = *self.object_pos.get(&pair.object).ok_or_else(|| {
                LabelSpaceError::UnknownPrimitive {
                    file: file.clone(),
                    line: i + 1,
                    kind: PrimitiveKind::Object,
                    token: pair.object.clone(),
                }
            })?;
            let idx = s * self.objects.len() + o;
            if !taken.insert(idx) {
                return Err(LabelSpaceError::Duplicate {
                    file,
                    line: i + 1,
                    value: pair.to_string(),
                });
            }
            out.push(idx);
        }
        Ok(out)
    }

    /// Loads a dataset directory. `val_unseen.tsv` is optional.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, LabelSpaceError> {
        let dir = dir.as_ref();
        let states = read_tokens(&dir.join(STATES_FILE))?;
        let objects = read_tokens(&dir.join(OBJECTS_FILE))?;
        let seen = read_pairs(&dir.join(SEEN_FILE))?;
        let unseen = read_pairs(&dir.join(UNSEEN_FILE))?;
        let val_path = dir.join(VAL_UNSEEN_FILE);
        let val_unseen = if val_path.exists() {
            read_pairs(&val_path)?
        } else {
            Vec::new()
        };
        Self::new(states, objects, seen, unseen, val_unseen)
    }

    /// Writes the space back out in the dataset directory format.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), LabelSpaceError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| LabelSpaceError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let write = |name: &str, lines: Vec<String>| -> Result<(), LabelSpaceError> {
            let path = dir.join(name);
            let mut body = String::new();
            for line in lines {
                body.push_str(&line);
                body.push('\n');
            }
            fs::write(&path, body).map_err(|source| LabelSpaceError::Io { path, source })
        };
        write(STATES_FILE, self.states.clone())?;
        write(OBJECTS_FILE, self.objects.clone())?;
        let tsv = |idx: &[usize]| {
            idx.iter()
                .map(|&i| {
                    let p = self.pair_at(i);
                    format!("{}\t{}", p.state, p.object)
                })
                .collect::<Vec<_>>()
        };
        write(SEEN_FILE, tsv(&self.seen))?;
        write(UNSEEN_FILE, tsv(&self.unseen))?;
        if !self.val_unseen.is_empty() {
            write(VAL_UNSEEN_FILE, tsv(&self.val_unseen))?;
        }
        Ok(())
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    /// |S| * |O|.
    pub fn all_count(&self) -> usize {
        self.states.len() * self.objects.len()
    }

    pub fn seen_count(&self) -> usize {
        self.seen.len()
    }

    pub fn unseen_count(&self) -> usize {
        self.unseen.len()
    }

    /// Seen pairs in file order.
    pub fn seen(&self) -> Vec<Pair> {
        self.seen.iter().map(|&i| self.pair_at(i)).collect()
    }

    /// Unseen pairs in file order.
    pub fn unseen(&self) -> Vec<Pair> {
        self.unseen.iter().map(|&i| self.pair_at(i)).collect()
    }

    pub fn val_unseen(&self) -> Vec<Pair> {
        self.val_unseen.iter().map(|&i| self.pair_at(i)).collect()
    }

    pub fn seen_indices(&self) -> &[usize] {
        &self.seen
    }

    pub fn unseen_indices(&self) -> &[usize] {
        &self.unseen
    }

    pub fn val_unseen_indices(&self) -> &[usize] {
        &self.val_unseen
    }

    /// The pair at enumeration position `idx`. Panics when out of range.
    pub fn pair_at(&self, idx: usize) -> Pair {
        let n_obj = self.objects.len();
        Pair {
            state: self.states[idx / n_obj].clone(),
            object: self.objects[idx % n_obj].clone(),
        }
    }

    /// Enumeration position of a pair, if both primitives are known.
    pub fn index_of(&self, pair: &Pair) -> Option<usize> {
        let s = self.state_pos.get(&pair.state)?;
        let o = self.object_pos.get(&pair.object)?;
        Some(s * self.objects.len() + o)
    }

    pub fn contains(&self, pair: &Pair) -> bool {
        self.index_of(pair).is_some()
    }

    pub fn is_seen_index(&self, idx: usize) -> bool {
        self.seen_mask[idx]
    }

    pub fn is_unseen_index(&self, idx: usize) -> bool {
        self.unseen_mask[idx]
    }

    pub fn is_seen(&self, pair: &Pair) -> bool {
        self.index_of(pair).is_some_and(|i| self.seen_mask[i])
    }

    pub fn is_unseen(&self, pair: &Pair) -> bool {
        self.index_of(pair).is_some_and(|i| self.unseen_mask[i])
    }

    /// Neither seen nor unseen.
    pub fn is_confusing_index(&self, idx: usize) -> bool {
        !self.seen_mask[idx] && !self.unseen_mask[idx]
    }

    /// Every composition, state-major in file order.
    pub fn enumerate_all(&self) -> Vec<Pair> {
        let mut out = Vec::with_capacity(self.all_count());
        for s in &self.states {
            for o in &self.objects {
                out.push(Pair {
                    state: s.clone(),
                    object: o.clone(),
                });
            }
        }
        out
    }

    /// Pairs in neither the seen nor the unseen split, in enumeration order.
    pub fn confusing_pairs(&self) -> Vec<Pair> {
        self.confusing_indices()
            .into_iter()
            .map(|i| self.pair_at(i))
            .collect()
    }

    pub fn confusing_indices(&self) -> Vec<usize> {
        (0..self.all_count())
            .filter(|&i| self.is_confusing_index(i))
            .collect()
    }

    /// Seen pairs sharing the query's state or object, in enumeration order.
    pub fn related_seen(&self, query: &Pair) -> Result<Vec<Pair>, LabelSpaceError> {
        Ok(self
            .related_seen_indices(query)?
            .into_iter()
            .map(|i| self.pair_at(i))
            .collect())
    }

    pub fn related_seen_indices(&self, query: &Pair) -> Result<Vec<usize>, LabelSpaceError> {
        let s = *self
            .state_pos
            .get(&query.state)
            .ok_or_else(|| LabelSpaceError::UnknownQuery {
                kind: PrimitiveKind::State,
                token: query.state.clone(),
            })?;
        let o = *self
            .object_pos
            .get(&query.object)
            .ok_or_else(|| LabelSpaceError::UnknownQuery {
                kind: PrimitiveKind::Object,
                token: query.object.clone(),
            })?;
        // both lists are sorted; merge without duplicates
        let (a, b) = (&self.seen_by_state[s], &self.seen_by_object[o]);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let next = match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) if x == y => {
                    i += 1;
                    j += 1;
                    x
                }
                (Some(&x), Some(&y)) if x < y => {
                    i += 1;
                    x
                }
                (Some(_), Some(&y)) => {
                    j += 1;
                    y
                }
                (Some(&x), None) => {
                    i += 1;
                    x
                }
                (None, Some(&y)) => {
                    j += 1;
                    y
                }
                (None, None) => unreachable!(),
            };
            out.push(next);
        }
        Ok(out)
    }

    /// States `s'` with `(s', object)` seen, in state order.
    pub fn seen_states_with_object(&self, object: &str) -> Vec<&str> {
        match self.object_pos.get(object) {
            Some(&o) => self.seen_by_object[o]
                .iter()
                .map(|&i| self.states[i / self.objects.len()].as_str())
                .collect(),
            None => Vec::new(),
        }
    }

    /// Objects `o'` with `(state, o')` seen, in object order.
    pub fn seen_objects_with_state(&self, state: &str) -> Vec<&str> {
        match self.state_pos.get(state) {
            Some(&s) => self.seen_by_state[s]
                .iter()
                .map(|&i| self.objects[i % self.objects.len()].as_str())
                .collect(),
            None => Vec::new(),
        }
    }
}

fn index_tokens(tokens: &[String], name: &str) -> Result<HashMap<String, usize>, LabelSpaceError> {
    let mut map = HashMap::with_capacity(tokens.len());
    for (i, t) in tokens.iter().enumerate() {
        check_token(t).map_err(|_| LabelSpaceError::Malformed {
            file: format!("{name}.txt"),
            line: i + 1,
            reason: format!("invalid token {t:?}"),
        })?;
        if map.insert(t.clone(), i).is_some() {
            return Err(LabelSpaceError::Duplicate {
                file: format!("{name}.txt"),
                line: i + 1,
                value: t.clone(),
            });
        }
    }
    Ok(map)
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn read_lines(path: &Path) -> Result<Vec<String>, LabelSpaceError> {
    if !path.is_file() {
        return Err(LabelSpaceError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|source| LabelSpaceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let body = text.strip_suffix('\n').unwrap_or(&text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    Ok(body.split('\n').map(str::to_string).collect())
}

fn read_tokens(path: &Path) -> Result<Vec<String>, LabelSpaceError> {
    let file = file_label(path);
    let lines = read_lines(path)?;
    for (i, line) in lines.iter().enumerate() {
        if check_token(line).is_err() {
            return Err(LabelSpaceError::Malformed {
                file: file.clone(),
                line: i + 1,
                reason: format!("invalid token {line:?}"),
            });
        }
    }
    Ok(lines)
}

/// Reads a `state<TAB>object` file.
pub fn read_pairs(path: &Path) -> Result<Vec<Pair>, LabelSpaceError> {
    let file = file_label(path);
    let lines = read_lines(path)?;
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let mut parts = line.split('\t');
            let (Some(s), Some(o), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(LabelSpaceError::Malformed {
                    file: file.clone(),
                    line: i + 1,
                    reason: "expected exactly two tab-separated fields".into(),
                });
            };
            Pair::new(s, o).map_err(|_| LabelSpaceError::Malformed {
                file: file.clone(),
                line: i + 1,
                reason: format!("invalid pair {line:?}"),
            })
        })
        .collect()
}

/// Writes pairs in the `seen.tsv` format.
pub fn write_pairs<'a>(
    path: &Path,
    pairs: impl IntoIterator<Item = &'a Pair>,
) -> Result<(), LabelSpaceError> {
    let io_err = |source| LabelSpaceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for p in pairs {
        writeln!(out, "{}\t{}", p.state, p.object).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str, o: &str) -> Pair {
        Pair::new(s, o).unwrap()
    }

    fn toy() -> PairSpace {
        let states = ["dark", "wet", "old"].map(String::from).to_vec();
        let objects = ["fire", "lightning", "dog"].map(String::from).to_vec();
        PairSpace::new(
            states,
            objects,
            vec![p("dark", "lightning"), p("wet", "dog"), p("old", "dog")],
            vec![p("dark", "fire")],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn singleton_space() {
        let space = PairSpace::new(
            vec!["hot".into()],
            vec!["fire".into()],
            vec![p("hot", "fire")],
            vec![],
            vec![],
        )
        .unwrap();
        assert_eq!(space.all_count(), 1);
        assert_eq!(space.enumerate_all(), vec![p("hot", "fire")]);
        assert!(space.confusing_pairs().is_empty());
    }

    #[test]
    fn related_seen_includes_shared_state() {
        let space = toy();
        let rel = space.related_seen(&p("dark", "fire")).unwrap();
        assert_eq!(rel, vec![p("dark", "lightning")]);
        let rel = space.related_seen(&p("old", "dog")).unwrap();
        assert_eq!(rel, vec![p("wet", "dog"), p("old", "dog")]);
    }

    #[test]
    fn related_seen_empty_and_unknown() {
        let space = PairSpace::new(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            vec![p("a", "x")],
            vec![],
            vec![],
        )
        .unwrap();
        assert!(space.related_seen(&p("b", "y")).unwrap().is_empty());
        assert!(matches!(
            space.related_seen(&p("zzz", "y")),
            Err(LabelSpaceError::UnknownQuery {
                kind: PrimitiveKind::State,
                ..
            })
        ));
    }

    #[test]
    fn overlap_rejected() {
        let err = PairSpace::new(
            vec!["a".into()],
            vec!["x".into()],
            vec![p("a", "x")],
            vec![p("a", "x")],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, LabelSpaceError::Overlap(_)));
    }

    #[test]
    fn invalid_tokens() {
        assert!(Pair::new("Dark", "fire").is_err());
        assert!(Pair::new("", "fire").is_err());
        assert!(Pair::new("da\trk", "fire").is_err());
        assert!(Pair::new("faux fur", "coat").is_ok());
    }

    #[test]
    fn confusing_is_complement() {
        let space = toy();
        let conf = space.confusing_pairs();
        assert_eq!(conf.len(), 9 - 3 - 1);
        assert!(!conf.contains(&p("dark", "fire")));
    }
}
