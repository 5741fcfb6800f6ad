use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::client::{ChatClient, LlmRequest};
use super::extract::{qa_score, yes_score, ScoreMode};
use super::LlmError;
use crate::labelspace::{Pair, PairSpace};
use crate::prompts::{render, select_guidance, PromptError, PromptFormat, PromptSpec, Rendering, SelectionMode};
use crate::table::{FeasibilityTable, Method, Provenance, TableEntry, SEEN_SENTINEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidancePolicy {
    pub mode: SelectionMode,
    pub n: usize,
    pub seed: u64,
}

impl Default for GuidancePolicy {
    fn default() -> Self {
        GuidancePolicy {
            mode: SelectionMode::Related,
            n: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringOptions {
    pub spec: PromptSpec,
    pub guidance: GuidancePolicy,
    pub mode: ScoreMode,
    pub top_logprobs_k: u32,
    /// Generation budget in binary mode; logit mode always asks for one token.
    pub binary_max_tokens: u32,
}

impl ScoringOptions {
    pub fn new(spec: PromptSpec, mode: ScoreMode) -> Self {
        ScoringOptions {
            spec,
            guidance: GuidancePolicy::default(),
            mode,
            top_logprobs_k: 20,
            binary_max_tokens: 16,
        }
    }

    pub fn method(&self) -> Method {
        match (self.spec.format, self.mode) {
            (PromptFormat::QaScore, _) => Method::FlmQaScore,
            (_, ScoreMode::Logit) => Method::FlmLogit,
            (_, ScoreMode::Binary) => Method::FlmBinary,
        }
    }

    fn request(&self, system_message: String, human_message: String) -> LlmRequest {
        match self.mode {
            ScoreMode::Logit => LlmRequest {
                system_message,
                human_message,
                max_new_tokens: 1,
                want_logprobs: true,
                top_logprobs_k: self.top_logprobs_k,
            },
            ScoreMode::Binary => LlmRequest {
                system_message,
                human_message,
                max_new_tokens: self.binary_max_tokens.max(1),
                want_logprobs: false,
                top_logprobs_k: 0,
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringStats {
    /// Pairs that needed a score (all but the seen pairs).
    pub queried_pairs: usize,
    pub network_calls: u64,
    pub cache_hits: u64,
    pub canonical_fallbacks: usize,
    pub failed_pairs: usize,
}

#[derive(Debug, Clone)]
pub struct ScoringReport {
    pub table: FeasibilityTable,
    pub stats: ScoringStats,
    /// Number of guidance pairs used per queried pair, enumeration order.
    pub guidance_sizes: Vec<(Pair, usize)>,
}

#[derive(Debug)]
pub struct PairFailure {
    pub pair: Pair,
    pub error: LlmError,
}

impl fmt::Display for PairFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scoring {:?} failed: {}", self.pair.to_string(), self.error)
    }
}

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{} pair(s) failed; first: {}", failures.len(), failures[0])]
    Partial {
        /// Table with failed pairs scored NaN and marked failed.
        report: Box<ScoringReport>,
        failures: Vec<PairFailure>,
    },
}

struct JobResult {
    rendering: Rendering,
    guidance_used: usize,
    score: Result<f64, LlmError>,
}

fn run_job(
    space: &PairSpace,
    options: &ScoringOptions,
    client: &ChatClient,
    pair: &Pair,
) -> Result<JobResult, PromptError> {
    let guidance = if options.spec.format == PromptFormat::Canonical {
        None
    } else {
        let g = &options.guidance;
        Some(select_guidance(space, pair, g.n, g.mode, g.seed)?)
    };
    let (text, rendering) = render(&options.spec, pair, guidance.as_ref())?;
    let guidance_used = match rendering {
        Rendering::AsSpecified => guidance.map_or(0, |g| g.pairs.len()),
        Rendering::CanonicalFallback => 0,
    };
    let request = options.request(text.system_message, text.human_message);
    let score = client.send(&request).and_then(|out| {
        if options.spec.format == PromptFormat::QaScore {
            qa_score(&out.response, options.mode)
        } else {
            yes_score(&out.response, options.mode)
        }
    });
    Ok(JobResult {
        rendering,
        guidance_used,
        score,
    })
}

/// Scores every pair of `space` with the LLM behind `client`.
///
/// Seen pairs are not queried and get the seen sentinel. At most
/// `client.config().parallelism` requests are in flight; the table does
/// not depend on that bound. Responses go through the client's cache, so
/// a rerun on a warm cache makes no network calls.
pub fn score_label_space(
    space: &PairSpace,
    options: &ScoringOptions,
    client: &ChatClient,
) -> Result<ScoringReport, ScoringError> {
    options.spec.validate()?;
    if options.spec.format != PromptFormat::Canonical
        && options.guidance.mode == SelectionMode::Random
        && options.guidance.n > space.seen_count()
    {
        return Err(PromptError::NotEnoughSeen {
            requested: options.guidance.n,
            available: space.seen_count(),
        }
        .into());
    }
    let calls_before = client.network_calls();
    let hits_before = client.cache_hits();

    let jobs: Vec<usize> = (0..space.all_count())
        .filter(|&i| !space.is_seen_index(i))
        .collect();
    let workers = client.config().parallelism.max(1).min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, next) = (&jobs, &next);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&idx) = jobs.get(i) else { break };
                let result = run_job(space, options, client, &space.pair_at(idx));
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);

    let mut results: Vec<Option<JobResult>> = (0..jobs.len()).map(|_| None).collect();
    for (i, r) in rx {
        results[i] = Some(r?);
    }

    let mut entries: Vec<TableEntry> = space
        .enumerate_all()
        .into_iter()
        .map(|pair| TableEntry {
            pair,
            score: SEEN_SENTINEL,
            provenance: Provenance::Seen,
        })
        .collect();
    let mut failures = Vec::new();
    let mut fallbacks = 0;
    let mut guidance_sizes = Vec::with_capacity(jobs.len());
    for (&idx, result) in jobs.iter().zip(results) {
        let result = result.expect("every job reports");
        let entry = &mut entries[idx];
        guidance_sizes.push((entry.pair.clone(), result.guidance_used));
        if result.rendering == Rendering::CanonicalFallback {
            fallbacks += 1;
        }
        match result.score {
            Ok(score) => {
                entry.score = score;
                entry.provenance = match result.rendering {
                    Rendering::AsSpecified => Provenance::Llm,
                    Rendering::CanonicalFallback => Provenance::CanonicalFallback,
                };
            }
            Err(error) => {
                entry.score = f64::NAN;
                entry.provenance = Provenance::Failed;
                failures.push(PairFailure {
                    pair: entry.pair.clone(),
                    error,
                });
            }
        }
    }

    let report = ScoringReport {
        table: FeasibilityTable::new(entries, options.method(), false),
        stats: ScoringStats {
            queried_pairs: jobs.len(),
            network_calls: client.network_calls() - calls_before,
            cache_hits: client.cache_hits() - hits_before,
            canonical_fallbacks: fallbacks,
            failed_pairs: failures.len(),
        },
        guidance_sizes,
    };
    if failures.is_empty() {
        Ok(report)
    } else {
        Err(ScoringError::Partial {
            report: Box::new(report),
            failures,
        })
    }
}
