//! Prompt composition for LLM feasibility queries.
//!
//! A prompt is a system message plus a human message. The system message
//! holds the persona (and, by default, the instruction); the human message
//! holds the optional guidance list of known-feasible pairs followed by the
//! query about the target pair.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelspace::{LabelSpaceError, Pair, PairSpace};

pub const PERSONA: &str = "You are a helpful, respectful and honest assistant.";
pub const CANONICAL_INSTRUCTION: &str = "Answer with a single word, yes or no.";
pub const CANONICAL_QUERY: &str = "Does a/an {s} {o} exist in the real world?";
pub const QA_SCORE_HEADER: &str = "The following list consists of words and their likelihood of existence in the real world, scored on a scale of 0 to 9.";
pub const QA_SCORE_QUERY: &str = "What is the score for \"{s} {o}\"?";
pub const QA_SCORE_INSTRUCTION: &str = "Answer with a single integer score from 0 to 9.";

pub const INSTRUCTIONS: [&str; 4] = [
    "Answer with a single word, yes or no.",
    "Answer with a single word, yes or no, followed by an explanation.",
    "Answer with yes or no.",
    "Answer with yes or no, followed by an explanation.",
];

pub const GUIDANCE_HEADERS: [&str; 4] = [
    "The following list consists of words that fit together.",
    "The following list consists of word combinations that make sense.",
    "The given list consists of word combinations that make sense.",
    "The given list comprises word combinations that make sense.",
];

pub const GUIDED_QUERIES: [&str; 4] = [
    "Considering the list above, does \"{s} {o}\" fit into the list?",
    "Does \"{s} {o}\" fit into the list above?",
    "Does \"{s} {o}\" align with the contents of the list provided above?",
    "Considering the list above, does \"{s} {o}\" align with the contents?",
];

const ARTICLE_PLACEHOLDER: &str = "a/an";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("query template must contain `{{s}}` and `{{o}}` exactly once: {0:?}")]
    Placeholder(String),
    #[error("persona must not be empty")]
    EmptyPersona,
    #[error("canonical prompts carry no guidance header")]
    CanonicalWithGuidance,
    #[error("prompt format {expected} required, spec has {actual}")]
    WrongFormat {
        expected: &'static str,
        actual: PromptFormat,
    },
    #[error("guided prompt for {0} has no guidance pairs")]
    EmptyGuidance(Pair),
    #[error("random guidance of {requested} pairs requested but only {available} seen pairs exist")]
    NotEnoughSeen { requested: usize, available: usize },
    #[error("unknown prompt preset {0:?}")]
    UnknownPreset(String),
    #[error(transparent)]
    LabelSpace(#[from] LabelSpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionPlacement {
    System,
    HmsgBegin,
    HmsgLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFormat {
    Canonical,
    ListGuided,
    QaYes,
    QaScore,
}

impl fmt::Display for PromptFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptFormat::Canonical => "canonical",
            PromptFormat::ListGuided => "list_guided",
            PromptFormat::QaYes => "qa_yes",
            PromptFormat::QaScore => "qa_score",
        })
    }
}

/// Structured prompt components.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptSpec {
    pub persona: String,
    pub instruction: String,
    pub instruction_placement: InstructionPlacement,
    /// List header sentence; empty for canonical prompts.
    pub guidance: String,
    /// Query template with `{s}` and `{o}` placeholders.
    pub query: String,
    pub format: PromptFormat,
}

impl Default for PromptSpec {
    fn default() -> Self {
        PromptSpec::canonical()
    }
}

impl PromptSpec {
    /// The plain yes/no prompt without in-context examples.
    pub fn canonical() -> Self {
        PromptSpec {
            persona: PERSONA.into(),
            instruction: CANONICAL_INSTRUCTION.into(),
            instruction_placement: InstructionPlacement::System,
            guidance: String::new(),
            query: CANONICAL_QUERY.into(),
            format: PromptFormat::Canonical,
        }
    }

    pub fn list_guided(instruction: &str, guidance: &str, query: &str) -> Self {
        PromptSpec {
            persona: PERSONA.into(),
            instruction: instruction.into(),
            instruction_placement: InstructionPlacement::System,
            guidance: guidance.into(),
            query: query.into(),
            format: PromptFormat::ListGuided,
        }
    }

    /// Guidance as repeated answered questions, each ending in "Yes.".
    pub fn qa_yes() -> Self {
        PromptSpec {
            format: PromptFormat::QaYes,
            ..PromptSpec::canonical()
        }
    }

    /// Guidance as a list of pairs scored 9 on a 0 to 9 scale.
    pub fn qa_score() -> Self {
        PromptSpec {
            persona: PERSONA.into(),
            instruction: QA_SCORE_INSTRUCTION.into(),
            instruction_placement: InstructionPlacement::System,
            guidance: QA_SCORE_HEADER.into(),
            query: QA_SCORE_QUERY.into(),
            format: PromptFormat::QaScore,
        }
    }

    pub fn with_placement(mut self, placement: InstructionPlacement) -> Self {
        self.instruction_placement = placement;
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.persona.trim().is_empty() {
            return Err(PromptError::EmptyPersona);
        }
        if self.query.matches("{s}").count() != 1 || self.query.matches("{o}").count() != 1 {
            return Err(PromptError::Placeholder(self.query.clone()));
        }
        if self.format == PromptFormat::Canonical && !self.guidance.is_empty() {
            return Err(PromptError::CanonicalWithGuidance);
        }
        Ok(())
    }

    /// The same spec reduced to a listless prompt; used when a guided
    /// prompt has no guidance pairs available. Score prompts keep their
    /// score question so the answer stays on the 0 to 9 scale.
    pub fn canonical_fallback(&self) -> PromptSpec {
        PromptSpec {
            persona: self.persona.clone(),
            instruction: self.instruction.clone(),
            instruction_placement: self.instruction_placement,
            guidance: String::new(),
            query: match self.format {
                PromptFormat::QaScore => self.query.clone(),
                _ => CANONICAL_QUERY.into(),
            },
            format: PromptFormat::Canonical,
        }
    }
}

/// The rendered messages sent to the model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptText {
    pub system_message: String,
    pub human_message: String,
}

impl PromptText {
    /// A plain-text transcript, as stored in the golden fixtures.
    pub fn transcript(&self) -> String {
        format!(
            "### system\n{}\n### human\n{}\n",
            self.system_message, self.human_message
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Related,
    Random,
}

/// In-context example pairs for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceSet {
    pub pairs: Vec<Pair>,
    pub selection_mode: SelectionMode,
    pub requested_count: usize,
    pub seed: u64,
}

impl GuidanceSet {
    pub fn related(pairs: Vec<Pair>) -> Self {
        GuidanceSet {
            requested_count: pairs.len(),
            pairs,
            selection_mode: SelectionMode::Related,
            seed: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// `a` or `an` for the word that follows, by its first letter.
pub fn article_for(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// Substitutes the placeholders and resolves the `a/an` article against
/// the state token.
pub fn fill_query(template: &str, state: &str, object: &str) -> String {
    template
        .replace(ARTICLE_PLACEHOLDER, article_for(state))
        .replace("{s}", state)
        .replace("{o}", object)
}

fn item_line(pair: &Pair) -> String {
    format!("- {} {}", pair.state, pair.object)
}

/// Places the instruction and joins the human message lines.
fn assemble(spec: &PromptSpec, mut body: Vec<String>) -> PromptText {
    let system_message = match spec.instruction_placement {
        InstructionPlacement::System => format!("{} {}", spec.persona, spec.instruction),
        InstructionPlacement::HmsgBegin => {
            body.insert(0, spec.instruction.clone());
            spec.persona.clone()
        }
        InstructionPlacement::HmsgLast => {
            body.push(spec.instruction.clone());
            spec.persona.clone()
        }
    };
    let human_message = body
        .iter()
        .map(|l| l.trim_end())
        .collect::<Vec<_>>()
        .join("\n");
    PromptText {
        system_message: system_message.trim_end().to_string(),
        human_message,
    }
}

fn expect_format(spec: &PromptSpec, allowed: &[PromptFormat], name: &'static str) -> Result<(), PromptError> {
    spec.validate()?;
    if allowed.contains(&spec.format) {
        Ok(())
    } else {
        Err(PromptError::WrongFormat {
            expected: name,
            actual: spec.format,
        })
    }
}

pub fn compose_canonical(spec: &PromptSpec, state: &str, object: &str) -> Result<PromptText, PromptError> {
    expect_format(spec, &[PromptFormat::Canonical], "canonical")?;
    Ok(assemble(spec, vec![fill_query(&spec.query, state, object)]))
}

pub fn compose_guided(
    spec: &PromptSpec,
    state: &str,
    object: &str,
    guidance: &GuidanceSet,
) -> Result<PromptText, PromptError> {
    expect_format(spec, &[PromptFormat::ListGuided], "list_guided")?;
    if guidance.is_empty() {
        return Err(PromptError::EmptyGuidance(Pair {
            state: state.into(),
            object: object.into(),
        }));
    }
    let mut body = Vec::with_capacity(guidance.pairs.len() + 2);
    body.push(spec.guidance.clone());
    body.extend(guidance.pairs.iter().map(item_line));
    body.push(fill_query(&spec.query, state, object));
    Ok(assemble(spec, body))
}

pub fn compose_qa(
    spec: &PromptSpec,
    state: &str,
    object: &str,
    guidance: &GuidanceSet,
) -> Result<PromptText, PromptError> {
    expect_format(spec, &[PromptFormat::QaYes, PromptFormat::QaScore], "qa_yes or qa_score")?;
    if guidance.is_empty() {
        return Err(PromptError::EmptyGuidance(Pair {
            state: state.into(),
            object: object.into(),
        }));
    }
    let mut body = Vec::with_capacity(guidance.pairs.len() + 2);
    match spec.format {
        PromptFormat::QaYes => {
            for p in &guidance.pairs {
                body.push(format!("{} Yes.", fill_query(&spec.query, &p.state, &p.object)));
            }
        }
        _ => {
            body.push(spec.guidance.clone());
            for p in &guidance.pairs {
                body.push(format!("{}, score: 9", item_line(p)));
            }
        }
    }
    body.push(fill_query(&spec.query, state, object));
    Ok(assemble(spec, body))
}

/// Whether a prompt was rendered as asked or fell back to canonical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rendering {
    AsSpecified,
    CanonicalFallback,
}

/// Renders any format. Guided formats with empty guidance fall back to the
/// canonical prompt built from the same persona and instruction.
pub fn render(
    spec: &PromptSpec,
    pair: &Pair,
    guidance: Option<&GuidanceSet>,
) -> Result<(PromptText, Rendering), PromptError> {
    let (s, o) = (pair.state.as_str(), pair.object.as_str());
    if spec.format == PromptFormat::Canonical {
        return Ok((compose_canonical(spec, s, o)?, Rendering::AsSpecified));
    }
    match guidance {
        Some(g) if !g.is_empty() => {
            let text = match spec.format {
                PromptFormat::ListGuided => compose_guided(spec, s, o, g)?,
                _ => compose_qa(spec, s, o, g)?,
            };
            Ok((text, Rendering::AsSpecified))
        }
        _ => {
            spec.validate()?;
            let fallback = spec.canonical_fallback();
            Ok((compose_canonical(&fallback, s, o)?, Rendering::CanonicalFallback))
        }
    }
}

/// Recovers the guidance pairs from a list-guided human message.
///
/// Item lines are split at the first space that yields a known state and a
/// known object, so multi-word primitives are handled.
pub fn parse_guidance(human_message: &str, space: &PairSpace) -> Vec<Pair> {
    let mut out = Vec::new();
    for line in human_message.lines() {
        let Some(item) = line.strip_prefix("- ") else {
            continue;
        };
        let item = item.strip_suffix(", score: 9").unwrap_or(item);
        for (i, _) in item.match_indices(' ') {
            let cand = Pair {
                state: item[..i].to_string(),
                object: item[i + 1..].to_string(),
            };
            if space.contains(&cand) {
                out.push(cand);
                break;
            }
        }
    }
    out
}

/// The 4 x 4 x 4 instruction/guidance/query grid, instruction-major.
pub fn enumerate_grid() -> Vec<PromptSpec> {
    let mut out = Vec::with_capacity(64);
    for instruction in INSTRUCTIONS {
        for guidance in GUIDANCE_HEADERS {
            for query in GUIDED_QUERIES {
                out.push(PromptSpec::list_guided(instruction, guidance, query));
            }
        }
    }
    out
}

/// Named prompt configurations.
pub const PRESET_NAMES: [&str; 8] = [
    "mit-states",
    "ut-zappos",
    "cgqa-clip",
    "cgqa-tuned",
    "guided-default",
    "canonical",
    "qa-yes",
    "qa-score",
];

pub fn preset(name: &str) -> Result<PromptSpec, PromptError> {
    let spec = match name {
        "mit-states" => PromptSpec::list_guided(INSTRUCTIONS[1], GUIDANCE_HEADERS[0], GUIDED_QUERIES[1]),
        "ut-zappos" => PromptSpec::list_guided(INSTRUCTIONS[0], GUIDANCE_HEADERS[2], GUIDED_QUERIES[0]),
        "cgqa-clip" => PromptSpec::list_guided(INSTRUCTIONS[1], GUIDANCE_HEADERS[2], GUIDED_QUERIES[2]),
        "cgqa-tuned" => PromptSpec::list_guided(INSTRUCTIONS[1], GUIDANCE_HEADERS[3], GUIDED_QUERIES[2]),
        "guided-default" => PromptSpec::list_guided(INSTRUCTIONS[0], GUIDANCE_HEADERS[1], GUIDED_QUERIES[1]),
        "canonical" => PromptSpec::canonical(),
        "qa-yes" => PromptSpec::qa_yes(),
        "qa-score" => PromptSpec::qa_score(),
        other => return Err(PromptError::UnknownPreset(other.to_string())),
    };
    Ok(spec)
}

/// Picks in-context pairs for `query`.
///
/// Related mode takes the first `n` seen pairs sharing a primitive with the
/// query. Random mode draws `n` seen pairs without replacement: the seen
/// pairs in enumeration order are shuffled with a ChaCha8 generator seeded
/// by `seed` and the first `n` kept.
pub fn select_guidance(
    space: &PairSpace,
    query: &Pair,
    n: usize,
    mode: SelectionMode,
    seed: u64,
) -> Result<GuidanceSet, PromptError> {
    let pairs = match mode {
        SelectionMode::Related => {
            let mut rel = space.related_seen_indices(query)?;
            rel.truncate(n);
            rel.into_iter().map(|i| space.pair_at(i)).collect()
        }
        SelectionMode::Random => {
            let available = space.seen_count();
            if n > available {
                return Err(PromptError::NotEnoughSeen {
                    requested: n,
                    available,
                });
            }
            let mut pool = space.seen_indices().to_vec();
            pool.sort_unstable();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            pool.shuffle(&mut rng);
            pool.truncate(n);
            pool.into_iter().map(|i| space.pair_at(i)).collect()
        }
    };
    Ok(GuidanceSet {
        pairs,
        selection_mode: mode,
        requested_count: n,
        seed,
    })
}
