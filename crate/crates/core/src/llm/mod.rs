//! LLM feasibility scoring over an OpenAI-compatible chat completions API.

mod cache;
mod client;
mod extract;
pub mod fixture;
mod rate;
mod scoring;

pub use cache::ResponseCache;
pub use client::{ChatClient, EndpointConfig, LlmRequest, LlmResponse, SendOutcome, API_KEY_ENV};
pub use extract::{qa_score, yes_score, ScoreMode};
pub use rate::TokenBucket;
pub use scoring::{
    score_label_space, GuidancePolicy, PairFailure, ScoringError, ScoringOptions, ScoringReport,
    ScoringStats,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("network failure after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("malformed response body: {0}")]
    Malformed(String),
    #[error("response carries no first-token log-probabilities")]
    MissingLogprobs,
    #[error("response text is empty")]
    EmptyText,
    #[error("no digit 0-9 found in response")]
    NoDigit,
    #[error("cache error: {0}")]
    Cache(String),
}

impl LlmError {
    /// Network, HTTP and body errors, as opposed to answer parsing errors.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            LlmError::Network { .. } | LlmError::Status { .. } | LlmError::Malformed(_)
        )
    }
}
