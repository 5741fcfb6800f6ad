//! Open-world evaluation: seen/unseen accuracy under a swept calibration
//! bias, feasibility accuracy in isolation, score histograms and per-pair
//! threshold reports.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::feasibility::CandidateSet;
use crate::labelspace::{Pair, PairSpace};
use crate::table::{FeasibilityTable, TableError};

pub const META_FILE: &str = "meta.json";
pub const PAIRS_FILE: &str = "pairs.tsv";
pub const IMAGES_FILE: &str = "images.tsv";
pub const SCORES_FILE: &str = "scores.bin";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("no images labeled with a seen pair")]
    NoSeenImages,
    #[error("no images labeled with an unseen pair")]
    NoUnseenImages,
    #[error("the unseen split is empty")]
    EmptyUnseen,
    #[error("the confusing set is empty")]
    EmptyConfusing,
    #[error("feasibility table is not normalized to [0, 1]")]
    NotNormalized,
    #[error("at least two histogram bins are required, got {0}")]
    TooFewBins(usize),
    #[error("pair {0} is not in the table")]
    UnknownPair(Pair),
    #[error("score matrix pair index does not match the label space: {0}")]
    PairIndexMismatch(String),
    #[error("invalid score matrix: {0}")]
    Matrix(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// 2ab / (a + b), or 0 when both are 0.
pub fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub true_pair: Pair,
}

/// Per-image classifier scores over every pair of a label space.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pair_index: Vec<Pair>,
    images: Vec<ImageRecord>,
    true_index: Vec<usize>,
    scores: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub n_images: usize,
    pub n_pairs: usize,
    /// SHA-256 of `scores.bin`, lowercase hex.
    pub checksum: String,
}

impl ScoreMatrix {
    pub fn new(pair_index: Vec<Pair>, images: Vec<ImageRecord>, scores: Vec<f32>) -> Result<Self, EvalError> {
        if scores.len() != images.len() * pair_index.len() {
            return Err(EvalError::Matrix(format!(
                "{} scores for {} images x {} pairs",
                scores.len(),
                images.len(),
                pair_index.len()
            )));
        }
        if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
            return Err(EvalError::Matrix(format!(
                "non-finite score at image {} pair {}",
                pos / pair_index.len().max(1),
                pos % pair_index.len().max(1)
            )));
        }
        let lookup: std::collections::HashMap<&Pair, usize> =
            pair_index.iter().enumerate().map(|(i, p)| (p, i)).collect();
        if lookup.len() != pair_index.len() {
            return Err(EvalError::Matrix("duplicate pairs in pair index".into()));
        }
        let true_index = images
            .iter()
            .map(|im| {
                lookup.get(&im.true_pair).copied().ok_or_else(|| {
                    EvalError::Matrix(format!(
                        "image {} has true pair {} outside the pair index",
                        im.image_id, im.true_pair
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScoreMatrix {
            pair_index,
            images,
            true_index,
            scores,
        })
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pair_index.len()
    }

    pub fn pair_index(&self) -> &[Pair] {
        &self.pair_index
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    /// Pair-index position of each image's true label.
    pub fn true_indices(&self) -> &[usize] {
        &self.true_index
    }

    pub fn row(&self, image: usize) -> &[f32] {
        let n = self.pair_index.len();
        &self.scores[image * n..(image + 1) * n]
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    /// Adds `c` to every score.
    pub fn shifted(&self, c: f32) -> Self {
        ScoreMatrix {
            scores: self.scores.iter().map(|s| s + c).collect(),
            ..self.clone()
        }
    }

    /// Checks that the pair index is the space's enumeration order.
    pub fn check_space(&self, space: &PairSpace) -> Result<(), EvalError> {
        if self.pair_index.len() != space.all_count() {
            return Err(EvalError::PairIndexMismatch(format!(
                "{} pairs in matrix, {} in space",
                self.pair_index.len(),
                space.all_count()
            )));
        }
        for (i, p) in self.pair_index.iter().enumerate() {
            if space.index_of(p) != Some(i) {
                return Err(EvalError::PairIndexMismatch(format!("position {i} holds {p}")));
            }
        }
        Ok(())
    }

    fn scores_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.scores.len() * 4);
        for s in &self.scores {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    /// Writes the `meta.json`, `pairs.tsv`, `images.tsv`, `scores.bin`
    /// directory format.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), EvalError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let bytes = self.scores_bytes();
        let meta = MatrixMeta {
            n_images: self.images.len(),
            n_pairs: self.pair_index.len(),
            checksum: hex::encode(Sha256::digest(&bytes)),
        };
        let path = dir.join(META_FILE);
        fs::write(&path, serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n")
            .map_err(io_err(&path))?;
        let mut pairs = String::new();
        for (i, p) in self.pair_index.iter().enumerate() {
            pairs.push_str(&format!("{i}\t{}\t{}\n", p.state, p.object));
        }
        let path = dir.join(PAIRS_FILE);
        fs::write(&path, pairs).map_err(io_err(&path))?;
        let mut images = String::new();
        for im in &self.images {
            images.push_str(&format!(
                "{}\t{}\t{}\n",
                im.image_id, im.true_pair.state, im.true_pair.object
            ));
        }
        let path = dir.join(IMAGES_FILE);
        fs::write(&path, images).map_err(io_err(&path))?;
        let path = dir.join(SCORES_FILE);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, EvalError> {
        let dir = dir.as_ref();
        let path = dir.join(META_FILE);
        let meta: MatrixMeta = serde_json::from_str(&fs::read_to_string(&path).map_err(io_err(&path))?)
            .map_err(|e| EvalError::Matrix(format!("{}: {e}", path.display())))?;

        let path = dir.join(PAIRS_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut pair_index = Vec::with_capacity(meta.n_pairs);
        for (line_no, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || EvalError::Matrix(format!("{PAIRS_FILE}:{}: malformed line", line_no + 1));
            if f.len() != 3 || f[0].parse::<usize>().ok() != Some(line_no) {
                return Err(bad());
            }
            pair_index.push(Pair::new(f[1], f[2]).map_err(|_| bad())?);
        }

        let path = dir.join(IMAGES_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut images = Vec::with_capacity(meta.n_images);
        for (line_no, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || EvalError::Matrix(format!("{IMAGES_FILE}:{}: malformed line", line_no + 1));
            if f.len() != 3 || f[0].is_empty() {
                return Err(bad());
            }
            images.push(ImageRecord {
                image_id: f[0].to_string(),
                true_pair: Pair::new(f[1], f[2]).map_err(|_| bad())?,
            });
        }
        if pair_index.len() != meta.n_pairs || images.len() != meta.n_images {
            return Err(EvalError::Matrix(format!(
                "meta.json declares {} images x {} pairs, files hold {} x {}",
                meta.n_images,
                meta.n_pairs,
                images.len(),
                pair_index.len()
            )));
        }

        let path = dir.join(SCORES_FILE);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if bytes.len() != meta.n_images * meta.n_pairs * 4 {
            return Err(EvalError::Matrix(format!(
                "{SCORES_FILE} has {} bytes, expected {}",
                bytes.len(),
                meta.n_images * meta.n_pairs * 4
            )));
        }
        let digest = hex::encode(Sha256::digest(&bytes));
        if !digest.eq_ignore_ascii_case(&meta.checksum) {
            return Err(EvalError::Matrix(format!(
                "checksum mismatch: meta.json has {}, {SCORES_FILE} hashes to {digest}",
                meta.checksum
            )));
        }
        let scores = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        ScoreMatrix::new(pair_index, images, scores)
    }
}

fn check_candidates(matrix: &ScoreMatrix, candidates: &CandidateSet) -> Result<(), EvalError> {
    if candidates.is_empty() {
        return Err(EvalError::EmptyCandidates);
    }
    if candidates.universe() != matrix.n_pairs() {
        return Err(EvalError::PairIndexMismatch(format!(
            "candidate set over {} pairs, matrix over {}",
            candidates.universe(),
            matrix.n_pairs()
        )));
    }
    Ok(())
}

/// Predicted pair-index positions: argmax over candidates of the score
/// minus `bias` for seen pairs; ties go to the lowest position.
pub fn classify_indices(
    matrix: &ScoreMatrix,
    candidates: &CandidateSet,
    bias: f64,
    space: &PairSpace,
) -> Result<Vec<usize>, EvalError> {
    check_candidates(matrix, candidates)?;
    Ok((0..matrix.n_images())
        .map(|i| {
            let row = matrix.row(i);
            let mut best = (f64::NEG_INFINITY, usize::MAX);
            for &j in candidates.indices() {
                let mut s = f64::from(row[j]);
                if space.is_seen_index(j) {
                    s -= bias;
                }
                if best.1 == usize::MAX || s > best.0 {
                    best = (s, j);
                }
            }
            best.1
        })
        .collect())
}

pub fn classify(
    matrix: &ScoreMatrix,
    candidates: &CandidateSet,
    bias: f64,
    space: &PairSpace,
) -> Result<Vec<Pair>, EvalError> {
    Ok(classify_indices(matrix, candidates, bias, space)?
        .into_iter()
        .map(|j| matrix.pair_index()[j].clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub bias: f64,
    pub seen_acc: f64,
    pub unseen_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Best seen accuracy over the sweep.
    pub seen: f64,
    /// Best unseen accuracy over the sweep.
    pub unseen: f64,
    /// Best harmonic mean over the sweep.
    pub harmonic: f64,
    /// Area under the seen/unseen frontier, in percent.
    pub auc: f64,
    pub sweep: Vec<SweepPoint>,
}

impl EvalResult {
    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let body = format!(
            "S,U,H,AUC\n{},{},{},{}\n",
            self.seen * 100.0,
            self.unseen * 100.0,
            self.harmonic * 100.0,
            self.auc
        );
        fs::write(path, body).map_err(io_err(path))
    }

    pub fn write_sweep_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let mut body = String::from("bias,seen_acc,unseen_acc\n");
        for p in &self.sweep {
            body.push_str(&format!("{:?},{:?},{:?}\n", p.bias, p.seen_acc, p.unseen_acc));
        }
        fs::write(path, body).map_err(io_err(path))
    }
}

/// Area under the Pareto frontier of (seen, unseen) points, integrated
/// over seen accuracy with the trapezoid rule and reported times 100. The
/// frontier is extended flat from seen = 0 to its leftmost point.
pub fn frontier_auc(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    // seen descending, then unseen descending
    pts.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut frontier: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        if frontier.last().is_none_or(|last| p.1 > last.1) {
            frontier.push(p);
        }
    }
    frontier.reverse();
    let Some(&(s0, u0)) = frontier.first() else {
        return 0.0;
    };
    let mut area = s0 * u0;
    for w in frontier.windows(2) {
        area += (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0;
    }
    area * 100.0
}

struct ImageOutcome {
    margin: f64,
    seen_first: bool,
    correct_if_seen: bool,
    correct_if_unseen: bool,
    seen_labeled: bool,
}

/// Seen/unseen accuracy over an exact calibration-bias sweep.
///
/// For each image the best seen and best non-seen candidates are compared;
/// the prediction switches from the seen one to the other once the bias
/// passes their score margin. Evaluating one bias below all margins, one
/// above, and the midpoints between consecutive distinct margins visits
/// every attainable (seen, unseen) accuracy pair.
pub fn sweep_eval(
    matrix: &ScoreMatrix,
    candidates: &CandidateSet,
    space: &PairSpace,
) -> Result<EvalResult, EvalError> {
    check_candidates(matrix, candidates)?;
    let n_seen_labeled = matrix
        .true_indices()
        .iter()
        .filter(|&&t| space.is_seen_index(t))
        .count();
    let n_unseen_labeled = matrix.n_images() - n_seen_labeled;
    if n_seen_labeled == 0 {
        return Err(EvalError::NoSeenImages);
    }
    if n_unseen_labeled == 0 {
        return Err(EvalError::NoUnseenImages);
    }

    // images whose prediction does not depend on the bias
    let (mut fixed_seen_correct, mut fixed_unseen_correct) = (0usize, 0usize);
    let mut switching = Vec::new();
    for i in 0..matrix.n_images() {
        let row = matrix.row(i);
        let truth = matrix.true_indices()[i];
        let seen_labeled = space.is_seen_index(truth);
        let mut best_seen: Option<(f64, usize)> = None;
        let mut best_unseen: Option<(f64, usize)> = None;
        for &j in candidates.indices() {
            let s = f64::from(row[j]);
            let slot = if space.is_seen_index(j) {
                &mut best_seen
            } else {
                &mut best_unseen
            };
            if slot.is_none_or(|(b, _)| s > b) {
                *slot = Some((s, j));
            }
        }
        match (best_seen, best_unseen) {
            (Some((s, js)), Some((u, ju))) => switching.push(ImageOutcome {
                margin: s - u,
                seen_first: js < ju,
                correct_if_seen: js == truth,
                correct_if_unseen: ju == truth,
                seen_labeled,
            }),
            (Some((_, j)), None) | (None, Some((_, j))) => {
                if j == truth {
                    if seen_labeled {
                        fixed_seen_correct += 1;
                    } else {
                        fixed_unseen_correct += 1;
                    }
                }
            }
            (None, None) => unreachable!("candidate set is non-empty"),
        }
    }
    switching.sort_by(|a, b| a.margin.total_cmp(&b.margin));

    let mut margins: Vec<f64> = switching.iter().map(|o| o.margin).collect();
    margins.dedup();
    let mut biases = Vec::with_capacity(margins.len() + 1);
    match (margins.first(), margins.last()) {
        (Some(&lo), Some(&hi)) => {
            biases.push(lo - 1.0);
            biases.extend(margins.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
            biases.push(hi + 1.0);
        }
        _ => biases.extend([-1.0, 1.0]),
    }

    // prefix sums over margin order: correct-if-unseen below, correct-if-seen above
    let n = switching.len();
    let mut unseen_pred_prefix = vec![(0usize, 0usize); n + 1];
    let mut seen_pred_suffix = vec![(0usize, 0usize); n + 1];
    for (k, o) in switching.iter().enumerate() {
        let (a, b) = unseen_pred_prefix[k];
        let add = o.correct_if_unseen as usize;
        unseen_pred_prefix[k + 1] = if o.seen_labeled { (a + add, b) } else { (a, b + add) };
    }
    for k in (0..n).rev() {
        let o = &switching[k];
        let (a, b) = seen_pred_suffix[k + 1];
        let add = o.correct_if_seen as usize;
        seen_pred_suffix[k] = if o.seen_labeled { (a + add, b) } else { (a, b + add) };
    }

    let mut sweep = Vec::with_capacity(biases.len());
    for &bias in &biases {
        let lo = switching.partition_point(|o| o.margin < bias);
        let hi = switching.partition_point(|o| o.margin <= bias);
        let mut seen_correct = fixed_seen_correct + unseen_pred_prefix[lo].0 + seen_pred_suffix[hi].0;
        let mut unseen_correct = fixed_unseen_correct + unseen_pred_prefix[lo].1 + seen_pred_suffix[hi].1;
        // margin exactly equal to the bias: lowest pair index wins
        for o in &switching[lo..hi] {
            let correct = if o.seen_first {
                o.correct_if_seen
            } else {
                o.correct_if_unseen
            };
            if correct {
                if o.seen_labeled {
                    seen_correct += 1;
                } else {
                    unseen_correct += 1;
                }
            }
        }
        sweep.push(SweepPoint {
            bias,
            seen_acc: seen_correct as f64 / n_seen_labeled as f64,
            unseen_acc: unseen_correct as f64 / n_unseen_labeled as f64,
        });
    }
    Ok(summarize(sweep))
}

/// S, U, H and AUC from a list of sweep points.
pub fn summarize(sweep: Vec<SweepPoint>) -> EvalResult {
    let seen = sweep.iter().map(|p| p.seen_acc).fold(0.0, f64::max);
    let unseen = sweep.iter().map(|p| p.unseen_acc).fold(0.0, f64::max);
    let harmonic_best = sweep
        .iter()
        .map(|p| harmonic(p.seen_acc, p.unseen_acc))
        .fold(0.0, f64::max);
    let points: Vec<(f64, f64)> = sweep.iter().map(|p| (p.seen_acc, p.unseen_acc)).collect();
    EvalResult {
        seen,
        unseen,
        harmonic: harmonic_best,
        auc: frontier_auc(&points),
        sweep,
    }
}

/// Feasibility accuracy in isolation from classification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsolationReport {
    /// Share of unseen pairs scored at or above the threshold.
    pub feasible_acc: f64,
    /// Share of confusing pairs scored below the threshold.
    pub infeasible_acc: f64,
    pub arith_mean: f64,
    pub harm_mean: f64,
    pub tau: f64,
}

impl IsolationReport {
    pub fn from_accuracies(feasible_acc: f64, infeasible_acc: f64, tau: f64) -> Self {
        IsolationReport {
            feasible_acc,
            infeasible_acc,
            arith_mean: (feasible_acc + infeasible_acc) / 2.0,
            harm_mean: harmonic(feasible_acc, infeasible_acc),
            tau,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let body = format!(
            "feasible_acc,infeasible_acc,arith_mean,harm_mean,tau\n{:?},{:?},{:?},{:?},{:?}\n",
            self.feasible_acc, self.infeasible_acc, self.arith_mean, self.harm_mean, self.tau
        );
        fs::write(path, body).map_err(io_err(path))
    }
}

pub fn isolation_metrics(
    table: &FeasibilityTable,
    tau: f64,
    space: &PairSpace,
) -> Result<IsolationReport, EvalError> {
    let scores = table.aligned_scores(space)?;
    let unseen = space.unseen_indices();
    if unseen.is_empty() {
        return Err(EvalError::EmptyUnseen);
    }
    let confusing = space.confusing_indices();
    if confusing.is_empty() {
        return Err(EvalError::EmptyConfusing);
    }
    let feasible_hits = unseen.iter().filter(|&&i| scores[i] >= tau).count();
    let infeasible_hits = confusing.iter().filter(|&&i| scores[i] < tau).count();
    Ok(IsolationReport::from_accuracies(
        feasible_hits as f64 / unseen.len() as f64,
        infeasible_hits as f64 / confusing.len() as f64,
        tau,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub feasible: usize,
    pub confusing: usize,
}

/// Score histograms of unseen ("feasible") and confusing pairs over [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let path = path.as_ref();
        let mut body = String::from("bin_low,bin_high,feasible_count,confusing_count\n");
        for b in &self.bins {
            body.push_str(&format!("{:?},{:?},{},{}\n", b.low, b.high, b.feasible, b.confusing));
        }
        fs::write(path, body).map_err(io_err(path))
    }
}

/// Equal-width bins; a score of exactly 1 lands in the last bin.
pub fn export_distribution(
    table: &FeasibilityTable,
    space: &PairSpace,
    bins: usize,
) -> Result<Histogram, EvalError> {
    if bins < 2 {
        return Err(EvalError::TooFewBins(bins));
    }
    if !table.normalized {
        return Err(EvalError::NotNormalized);
    }
    let scores = table.aligned_scores(space)?;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|k| HistogramBin {
            low: k as f64 / bins as f64,
            high: (k + 1) as f64 / bins as f64,
            feasible: 0,
            confusing: 0,
        })
        .collect();
    let bin_of = |x: f64| -> Result<usize, EvalError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(EvalError::NotNormalized);
        }
        Ok(((x * bins as f64) as usize).min(bins - 1))
    };
    for &i in space.unseen_indices() {
        out[bin_of(scores[i])?].feasible += 1;
    }
    for i in space.confusing_indices() {
        out[bin_of(scores[i])?].confusing += 1;
    }
    Ok(Histogram { bins: out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitativeRow {
    pub pair: Pair,
    /// Score minus threshold.
    pub margin: f64,
    pub feasible: bool,
}

/// Per-pair score relative to the threshold, highest first.
pub fn qualitative_report(
    table: &FeasibilityTable,
    tau: f64,
    pairs: &[Pair],
) -> Result<Vec<QualitativeRow>, EvalError> {
    let mut rows = pairs
        .iter()
        .map(|p| {
            let g = table.get(p).ok_or_else(|| EvalError::UnknownPair(p.clone()))?;
            Ok(QualitativeRow {
                pair: p.clone(),
                margin: g - tau,
                feasible: g >= tau,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    rows.sort_by(|a, b| b.margin.total_cmp(&a.margin));
    Ok(rows)
}

pub fn write_qualitative_csv(rows: &[QualitativeRow], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    let mut w = io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    let mut write = || -> io::Result<()> {
        writeln!(w, "state,object,score_minus_tau,verdict")?;
        for r in rows {
            writeln!(
                w,
                "{},{},{},{}",
                csv_field(&r.pair.state),
                csv_field(&r.pair.object),
                crate::table::format_score(r.margin),
                if r.feasible { "feasible" } else { "infeasible" }
            )?;
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
