//! Turning model answers into feasibility scores.

use serde::{Deserialize, Serialize};

use super::client::LlmResponse;
use super::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Read first-token log-probabilities.
    Logit,
    /// Parse the generated text.
    Binary,
}

/// Strips whitespace and the word-boundary markers used by SentencePiece
/// (`▁`) and byte-level BPE (`Ġ`) vocabularies.
fn normalize_token(token: &str) -> String {
    token
        .trim_matches(|c: char| c.is_whitespace() || c == '\u{2581}' || c == '\u{0120}')
        .to_lowercase()
}

/// Feasibility from a yes/no answer.
///
/// Logit mode returns the largest log-probability among first-token
/// alternatives spelling "yes"; when none does, one below the smallest
/// returned log-probability. Binary mode returns 1 when the first word of
/// the text is "yes", else 0.
pub fn yes_score(response: &LlmResponse, mode: ScoreMode) -> Result<f64, LlmError> {
    match mode {
        ScoreMode::Logit => {
            let map = response
                .first_token_top_logprobs
                .as_ref()
                .filter(|m| !m.is_empty())
                .ok_or(LlmError::MissingLogprobs)?;
            let yes = map
                .iter()
                .filter(|(t, _)| normalize_token(t) == "yes")
                .map(|(_, &lp)| lp)
                .fold(None, |acc: Option<f64>, lp| Some(acc.map_or(lp, |a| a.max(lp))));
            Ok(match yes {
                Some(lp) => lp,
                None => map.values().copied().fold(f64::INFINITY, f64::min) - 1.0,
            })
        }
        ScoreMode::Binary => {
            let text = response.text.trim();
            if text.is_empty() {
                return Err(LlmError::EmptyText);
            }
            let first = text
                .split_whitespace()
                .find(|w| w.chars().any(char::is_alphabetic))
                .map(|w| {
                    w.trim_matches(|c: char| !c.is_alphanumeric())
                        .to_lowercase()
                })
                .unwrap_or_default();
            Ok(if first == "yes" { 1.0 } else { 0.0 })
        }
    }
}

/// Score on the 0 to 9 scale.
///
/// Binary mode takes the first integer in 0..=9 appearing in the text.
/// Logit mode takes the expected digit under the first-token distribution
/// restricted to single-digit tokens and renormalized.
pub fn qa_score(response: &LlmResponse, mode: ScoreMode) -> Result<f64, LlmError> {
    match mode {
        ScoreMode::Binary => {
            let text = response.text.as_str();
            if text.trim().is_empty() {
                return Err(LlmError::EmptyText);
            }
            let mut chars = text.char_indices().peekable();
            while let Some((start, c)) = chars.next() {
                if !c.is_ascii_digit() {
                    continue;
                }
                let mut end = start + c.len_utf8();
                while let Some(&(i, d)) = chars.peek() {
                    if !d.is_ascii_digit() {
                        break;
                    }
                    end = i + d.len_utf8();
                    chars.next();
                }
                if let Ok(v) = text[start..end].parse::<u32>() {
                    if v <= 9 {
                        return Ok(f64::from(v));
                    }
                }
            }
            Err(LlmError::NoDigit)
        }
        ScoreMode::Logit => {
            let map = response
                .first_token_top_logprobs
                .as_ref()
                .filter(|m| !m.is_empty())
                .ok_or(LlmError::MissingLogprobs)?;
            let digits: Vec<(f64, f64)> = map
                .iter()
                .filter_map(|(t, &lp)| {
                    let t = normalize_token(t);
                    let mut cs = t.chars();
                    match (cs.next(), cs.next()) {
                        (Some(c), None) if c.is_ascii_digit() => {
                            Some((f64::from(c.to_digit(10)?), lp))
                        }
                        _ => None,
                    }
                })
                .collect();
            if digits.is_empty() {
                return Err(LlmError::NoDigit);
            }
            // shift by the max before exponentiating
            let top = digits.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max);
            let (mass, weighted) = digits.iter().fold((0.0, 0.0), |(m, w), &(v, lp)| {
                let p = (lp - top).exp();
                (m + p, w + p * v)
            });
            Ok(weighted / mass)
        }
    }
}
