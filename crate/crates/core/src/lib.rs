//! Feasibility scoring and open-world evaluation for state-object
//! compositions.

pub mod embed;
pub mod eval;
pub mod feasibility;
pub mod labelspace;
pub mod llm;
pub mod prompts;
pub mod table;
