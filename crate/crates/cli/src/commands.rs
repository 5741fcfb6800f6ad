use std::path::{Path, PathBuf};

use log::{info, warn};
use serde_json::json;

use flab_core::embed::{baseline_table, vocabulary, EmbeddingSet};
use flab_core::eval::{
    export_distribution, isolation_metrics, qualitative_report, sweep_eval, write_qualitative_csv, IsolationReport,
    ScoreMatrix,
};
use flab_core::feasibility::{filter, normalize, select_threshold, CalibrationResult, CandidateSet};
use flab_core::labelspace::{read_pairs, Pair, PairSpace};
use flab_core::llm::{
    score_label_space, ChatClient, GuidancePolicy, ResponseCache, ScoreMode, ScoringError, ScoringOptions,
    ScoringReport, ScoringStats,
};
use flab_core::prompts::{self, render, select_guidance, PromptFormat};
use flab_core::table::{FeasibilityTable, Method};

use crate::config::{require_exists, RunConfig};
use crate::error::{CliError, OrValidation};
use crate::manifest::{GuidanceSize, RunManifest, ScoringSummary};

pub const TABLE_FILE: &str = "table.csv";
pub const NORMALIZED_TABLE_FILE: &str = "table_normalized.csv";
pub const CALIBRATION_CSV: &str = "calibration.csv";
pub const CALIBRATION_JSON: &str = "calibration.json";
pub const CANDIDATES_FILE: &str = "candidates.tsv";
pub const SUMMARY_FILE: &str = "eval_summary.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const ISOLATION_FILE: &str = "isolation.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const QUALITATIVE_FILE: &str = "qualitative.csv";

pub fn manifest_name(command: &str) -> String {
    format!("{command}_manifest.json")
}

pub fn load_space(cfg: &RunConfig) -> Result<(PathBuf, PairSpace), CliError> {
    let dir = cfg.dataset()?.to_path_buf();
    let space = PairSpace::load(&dir).invalid(&format!("dataset {}", dir.display()))?;
    Ok((dir, space))
}

pub fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.output()?.to_path_buf();
    std::fs::create_dir_all(&out).io_context(&format!("creating {}", out.display()))?;
    Ok(out)
}

fn load_table(path: &Path, space: &PairSpace) -> Result<FeasibilityTable, CliError> {
    require_exists(path, "table")?;
    let table = FeasibilityTable::read_csv(path).invalid(&format!("table {}", path.display()))?;
    table.check_covers(space).invalid(&format!("table {}", path.display()))?;
    Ok(table)
}

fn load_matrix(path: &Path, space: &PairSpace, what: &str) -> Result<ScoreMatrix, CliError> {
    require_exists(path, what)?;
    let m = ScoreMatrix::load(path).invalid(&format!("{what} {}", path.display()))?;
    m.check_space(space).invalid(&format!("{what} {}", path.display()))?;
    Ok(m)
}

pub fn ingest(cfg: &RunConfig, matrices: &[PathBuf], table: Option<&Path>) -> Result<serde_json::Value, CliError> {
    let (dir, space) = load_space(cfg)?;
    let mut summary = json!({
        "dataset": dir.display().to_string(),
        "states": space.states().len(),
        "objects": space.objects().len(),
        "all": space.all_count(),
        "seen": space.seen_count(),
        "unseen": space.unseen_count(),
        "val_unseen": space.val_unseen_indices().len(),
        "confusing": space.confusing_indices().len(),
    });
    let mut checked = Vec::new();
    for m in matrices {
        let matrix = load_matrix(m, &space, "score matrix")?;
        checked.push(json!({
            "path": m.display().to_string(),
            "n_images": matrix.n_images(),
            "n_pairs": matrix.n_pairs(),
        }));
    }
    if !checked.is_empty() {
        summary["matrices"] = checked.into();
    }
    if let Some(t) = table {
        let table = load_table(t, &space)?;
        summary["table"] = json!({
            "path": t.display().to_string(),
            "method": table.method.as_str(),
            "rows": table.len(),
            "failed": table.failed_pairs().len(),
        });
    }
    if let Some(out) = &cfg.output {
        std::fs::create_dir_all(out).io_context(&format!("creating {}", out.display()))?;
        let path = out.join("ingest.json");
        let body = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        std::fs::write(&path, body).io_context(&format!("writing {}", path.display()))?;
    }
    Ok(summary)
}

fn score_mode(method: Method) -> ScoreMode {
    match method {
        Method::FlmLogit => ScoreMode::Logit,
        _ => ScoreMode::Binary,
    }
}

fn scoring_summary(method: Method, report: &ScoringReport) -> ScoringSummary {
    ScoringSummary {
        method: method.as_str().to_string(),
        stats: report.stats.clone(),
        failed_pairs: report.table.failed_pairs().iter().map(|p| p.to_string()).collect(),
        guidance_sizes: report
            .guidance_sizes
            .iter()
            .map(|(p, n)| GuidanceSize {
                state: p.state.clone(),
                object: p.object.clone(),
                n: *n,
            })
            .collect(),
    }
}

/// Scores the label space, writes the table and the manifest.
pub fn score(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let method = cfg.validate_for_scoring()?;
    let (dataset, space) = load_space(cfg)?;
    let out = out_dir(cfg)?;
    let mut manifest = RunManifest::new("score", cfg.digest(), cfg.seed);
    manifest.input("dataset", &dataset)?;

    let mut failure = None;
    let report = if method.is_llm() {
        let spec = cfg.prompt_spec()?;
        let mut options = ScoringOptions::new(spec, score_mode(method));
        options.guidance = GuidancePolicy {
            mode: cfg.guidance.mode,
            n: cfg.guidance.n,
            seed: cfg.seed,
        };
        let cache = match &cfg.cache {
            Some(dir) => Some(ResponseCache::open(dir).io_context(&format!("opening cache {}", dir.display()))?),
            None => None,
        };
        let client = ChatClient::new(cfg.endpoint.clone().with_env_key(), cache);
        info!("scoring {} pairs with {}", space.all_count() - space.seen_count(), method);
        match score_label_space(&space, &options, &client) {
            Ok(r) => r,
            Err(ScoringError::Prompt(e)) => return Err(CliError::validation(e.to_string())),
            Err(ScoringError::Partial { report, failures }) => {
                let names: Vec<String> = failures.iter().map(|f| f.pair.to_string()).collect();
                let everything_failed = failures.len() == report.stats.queried_pairs;
                let all_transport = failures.iter().all(|f| f.error.is_transport());
                let message = format!("{} pair(s) failed; first: {}", failures.len(), failures[0]);
                failure = Some(if everything_failed && all_transport {
                    CliError::transport(message, names)
                } else {
                    CliError::partial(message, names)
                });
                *report
            }
        }
    } else {
        let path = cfg.embedding.path.as_deref().expect("validated");
        manifest.input("embedding", path)?;
        let emb = EmbeddingSet::load(path, cfg.embedding.oov, Some(&vocabulary(&space)))
            .invalid(&format!("embedding file {}", path.display()))?;
        let table = baseline_table(&space, &emb, method, cfg.embedding.reduction).invalid("embedding baseline")?;
        ScoringReport {
            table,
            stats: ScoringStats {
                queried_pairs: space.all_count() - space.seen_count(),
                ..Default::default()
            },
            guidance_sizes: Vec::new(),
        }
    };

    let table_path = out.join(TABLE_FILE);
    report
        .table
        .write_csv(&table_path)
        .io_context(&format!("writing {}", table_path.display()))?;
    manifest.output(&table_path);
    manifest.scoring = Some(scoring_summary(method, &report));
    manifest.write(&out.join(manifest_name("score")))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(table_path),
    }
}

/// Normalizes the table, picks τ on validation images and filters.
pub fn calibrate(cfg: &RunConfig, table_path: &Path) -> Result<CalibrationResult, CliError> {
    let (dataset, space) = load_space(cfg)?;
    let out = out_dir(cfg)?;
    let table = load_table(table_path, &space)?;
    let val_path = cfg
        .calibration
        .val_matrix
        .as_deref()
        .ok_or_else(|| CliError::validation("no validation score matrix configured"))?;
    let val = load_matrix(val_path, &space, "validation score matrix")?;

    // min-max is idempotent, so an already normalized table passes through unchanged
    let norm = normalize(&table).invalid("normalizing table")?;
    let cal = select_threshold(&norm, &space, &val).invalid("threshold selection")?;
    let candidates = filter(&space, &norm, cal.tau).invalid("filtering")?;
    info!(
        "tau {} keeps {} of {} pairs (val unseen acc {:.4})",
        cal.tau,
        candidates.len(),
        space.all_count(),
        cal.best_accuracy()
    );

    let mut manifest = RunManifest::new("calibrate", cfg.digest(), cfg.seed);
    manifest.input("dataset", &dataset)?;
    manifest.input("table", table_path)?;
    manifest.input("val_matrix", val_path)?;
    let norm_path = out.join(NORMALIZED_TABLE_FILE);
    norm.write_csv(&norm_path).io_context("writing normalized table")?;
    let csv_path = out.join(CALIBRATION_CSV);
    cal.write_csv(&csv_path).io_context("writing calibration report")?;
    let json_path = out.join(CALIBRATION_JSON);
    cal.write_json(&json_path).io_context("writing calibration")?;
    let cand_path = out.join(CANDIDATES_FILE);
    candidates
        .write_tsv(&cand_path, &space)
        .io_context("writing candidates")?;
    for p in [&norm_path, &csv_path, &json_path, &cand_path] {
        manifest.output(p);
    }
    manifest.summary = json!({
        "tau": cal.tau,
        "candidate_thresholds": cal.candidate_taus.len(),
        "val_unseen_accuracy": cal.best_accuracy(),
        "kept_pairs": candidates.len(),
    });
    manifest.write(&out.join(manifest_name("calibrate")))?;
    Ok(cal)
}

#[derive(Debug, Clone, Copy)]
pub enum TauSource<'a> {
    Value(f64),
    Calibration(&'a Path),
}

/// Threshold and the table on the scale it applies to.
fn table_at_tau(table: FeasibilityTable, tau: TauSource<'_>) -> Result<(FeasibilityTable, f64), CliError> {
    match tau {
        TauSource::Value(t) => Ok((table, t)),
        TauSource::Calibration(p) => {
            require_exists(p, "calibration")?;
            let cal = CalibrationResult::read_json(p).invalid(&format!("calibration {}", p.display()))?;
            let table = normalize(&table).invalid("normalizing table")?;
            Ok((table, cal.tau))
        }
    }
}

pub fn filter_cmd(cfg: &RunConfig, table_path: &Path, tau: TauSource<'_>, dest: &Path) -> Result<usize, CliError> {
    let (_, space) = load_space(cfg)?;
    let table = load_table(table_path, &space)?;
    let (table, tau) = table_at_tau(table, tau)?;
    let candidates = filter(&space, &table, tau).invalid("filtering")?;
    if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).io_context(&format!("creating {}", parent.display()))?;
    }
    candidates.write_tsv(dest, &space).io_context("writing candidates")?;
    Ok(candidates.len())
}

pub struct EvaluateInputs<'a> {
    /// None evaluates over the whole label space.
    pub candidates: Option<&'a Path>,
    pub table: Option<&'a Path>,
    pub tau: Option<TauSource<'a>>,
    pub pairs: Option<&'a Path>,
}

pub struct Evaluation {
    pub seen: f64,
    pub unseen: f64,
    pub harmonic: f64,
    pub auc: f64,
}

impl Evaluation {
    /// Percentages in S, U, H, AUC order.
    pub fn line(&self) -> String {
        format!(
            "S={:.1} U={:.1} H={:.1} AUC={:.1}",
            self.seen * 100.0,
            self.unseen * 100.0,
            self.harmonic * 100.0,
            self.auc
        )
    }
}

pub fn evaluate(cfg: &RunConfig, inputs: &EvaluateInputs<'_>) -> Result<Evaluation, CliError> {
    let (dataset, space) = load_space(cfg)?;
    let out = out_dir(cfg)?;
    let test_path = cfg
        .evaluation
        .test_matrix
        .as_deref()
        .ok_or_else(|| CliError::validation("no test score matrix configured"))?;
    let test = load_matrix(test_path, &space, "test score matrix")?;
    let mut manifest = RunManifest::new("evaluate", cfg.digest(), cfg.seed);
    manifest.input("dataset", &dataset)?;
    manifest.input("test_matrix", test_path)?;

    let candidates = match inputs.candidates {
        Some(p) => {
            require_exists(p, "candidates")?;
            manifest.input("candidates", p)?;
            CandidateSet::read_tsv(p, &space, f64::NAN).invalid(&format!("candidates {}", p.display()))?
        }
        None => CandidateSet::all(&space),
    };
    let result = sweep_eval(&test, &candidates, &space).invalid("evaluation")?;
    let summary_path = out.join(SUMMARY_FILE);
    result.write_summary_csv(&summary_path).io_context("writing summary")?;
    let sweep_path = out.join(SWEEP_FILE);
    result.write_sweep_csv(&sweep_path).io_context("writing sweep")?;
    manifest.output(&summary_path);
    manifest.output(&sweep_path);
    manifest.summary = json!({
        "seen": result.seen,
        "unseen": result.unseen,
        "harmonic": result.harmonic,
        "auc": result.auc,
        "candidates": candidates.len(),
    });

    match (inputs.table, inputs.tau) {
        (Some(t), Some(tau)) => {
            manifest.input("table", t)?;
            for path in feasibility_reports(cfg, &space, t, tau, inputs.pairs, &out)? {
                manifest.output(&path);
            }
        }
        _ => warn!("no feasibility table and threshold; skipping isolation, histogram and qualitative reports"),
    }
    manifest.write(&out.join(manifest_name("evaluate")))?;
    Ok(Evaluation {
        seen: result.seen,
        unseen: result.unseen,
        harmonic: result.harmonic,
        auc: result.auc,
    })
}

/// Isolation, histogram and qualitative files for one table and threshold.
pub fn feasibility_reports(
    cfg: &RunConfig,
    space: &PairSpace,
    table_path: &Path,
    tau: TauSource<'_>,
    pairs: Option<&Path>,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let table = load_table(table_path, space)?;
    let (table, tau) = table_at_tau(table, tau)?;
    let mut written = Vec::new();

    let iso = isolation_metrics(&table, tau, space).invalid("isolation metrics")?;
    let iso_path = out.join(ISOLATION_FILE);
    iso.write_csv(&iso_path).io_context("writing isolation report")?;
    written.push(iso_path);

    if table.normalized {
        let hist = export_distribution(&table, space, cfg.evaluation.bins).invalid("score histogram")?;
        let hist_path = out.join(HISTOGRAM_FILE);
        hist.write_csv(&hist_path).io_context("writing histogram")?;
        written.push(hist_path);
    } else {
        warn!("table is not normalized; skipping the score histogram");
    }

    let pairs: Vec<Pair> = match pairs {
        Some(p) => {
            require_exists(p, "pair list")?;
            read_pairs(p).invalid(&format!("pair list {}", p.display()))?
        }
        None => space
            .enumerate_all()
            .into_iter()
            .filter(|p| !space.is_seen(p))
            .collect(),
    };
    let rows = qualitative_report(&table, tau, &pairs).invalid("qualitative report")?;
    let q_path = out.join(QUALITATIVE_FILE);
    write_qualitative_csv(&rows, &q_path).io_context("writing qualitative report")?;
    written.push(q_path);
    Ok(written)
}

pub fn replay_means(feasible: f64, infeasible: f64) -> Result<IsolationReport, CliError> {
    for (name, v) in [("feasible", feasible), ("infeasible", infeasible)] {
        if !(0.0..=100.0).contains(&v) {
            return Err(CliError::validation(format!("{name} accuracy {v} is outside [0, 100]")));
        }
    }
    Ok(IsolationReport::from_accuracies(feasible / 100.0, infeasible / 100.0, f64::NAN))
}

pub fn prompts_grid() -> Vec<serde_json::Value> {
    prompts::enumerate_grid()
        .into_iter()
        .enumerate()
        .map(|(i, spec)| {
            json!({
                "index": i,
                "instruction": spec.instruction,
                "guidance": spec.guidance,
                "query": spec.query,
            })
        })
        .collect()
}

/// Renders the prompt one pair would be scored with.
pub fn prompts_render(cfg: &RunConfig, pair: &Pair) -> Result<String, CliError> {
    let spec = cfg.prompt_spec()?;
    let guidance = if spec.format == PromptFormat::Canonical {
        None
    } else {
        let (_, space) = load_space(cfg)?;
        if !space.contains(pair) {
            return Err(CliError::validation(format!("pair {pair} is not in the label space")));
        }
        Some(select_guidance(&space, pair, cfg.guidance.n, cfg.guidance.mode, cfg.seed).invalid("guidance")?)
    };
    let (text, _) = render(&spec, pair, guidance.as_ref()).invalid("rendering")?;
    Ok(text.transcript())
}
