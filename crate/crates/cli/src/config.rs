//! Declarative run configuration.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Command-line flags override individual fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use flab_core::embed::{OovPolicy, SideReduction};
use flab_core::llm::EndpointConfig;
use flab_core::prompts::{self, InstructionPlacement, PromptFormat, PromptSpec, SelectionMode};
use flab_core::table::Method;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Seeds random guidance selection.
    pub seed: u64,
    pub method: Option<String>,
    pub prompt: PromptConfig,
    pub guidance: GuidanceConfig,
    pub endpoint: EndpointConfig,
    /// Response cache directory; no caching when absent.
    pub cache: Option<PathBuf>,
    pub embedding: EmbeddingConfig,
    pub calibration: CalibrationConfig,
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub preset: Option<String>,
    pub persona: Option<String>,
    pub instruction: Option<String>,
    pub guidance: Option<String>,
    pub query: Option<String>,
    pub format: Option<PromptFormat>,
    pub placement: InstructionPlacement,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            preset: None,
            persona: None,
            instruction: None,
            guidance: None,
            query: None,
            format: None,
            placement: InstructionPlacement::System,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub mode: SelectionMode,
    pub n: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            mode: SelectionMode::Related,
            n: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub path: Option<PathBuf>,
    pub oov: OovPolicy,
    pub reduction: SideReduction,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            path: None,
            oov: OovPolicy::ZeroVector,
            reduction: SideReduction::Max,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub val_matrix: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub test_matrix: Option<PathBuf>,
    pub bins: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            test_matrix: None,
            bins: 10,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::validation(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.output);
        fix(&mut self.cache);
        fix(&mut self.embedding.path);
        fix(&mut self.calibration.val_matrix);
        fix(&mut self.evaluation.test_matrix);
    }

    /// SHA-256 of the effective configuration, API key excluded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn method(&self) -> Result<Method, CliError> {
        let m = self
            .method
            .as_deref()
            .ok_or_else(|| CliError::validation("no scoring method configured"))?;
        m.parse().map_err(CliError::validation)
    }

    pub fn dataset(&self) -> Result<&Path, CliError> {
        let p = self
            .dataset
            .as_deref()
            .ok_or_else(|| CliError::validation("no dataset directory configured"))?;
        require_exists(p, "dataset")?;
        Ok(p)
    }

    pub fn output(&self) -> Result<&Path, CliError> {
        self.output
            .as_deref()
            .ok_or_else(|| CliError::validation("no output directory configured"))
    }

    /// The prompt: a preset with field overrides, or explicit fields.
    pub fn prompt_spec(&self) -> Result<PromptSpec, CliError> {
        let p = &self.prompt;
        let mut spec = match &p.preset {
            Some(name) => prompts::preset(name).map_err(|e| CliError::validation(e.to_string()))?,
            None => PromptSpec::canonical(),
        };
        if let Some(f) = p.format {
            if f != spec.format {
                spec = match f {
                    PromptFormat::Canonical => PromptSpec::canonical(),
                    PromptFormat::ListGuided => PromptSpec::list_guided(
                        prompts::INSTRUCTIONS[0],
                        prompts::GUIDANCE_HEADERS[1],
                        prompts::GUIDED_QUERIES[1],
                    ),
                    PromptFormat::QaYes => PromptSpec::qa_yes(),
                    PromptFormat::QaScore => PromptSpec::qa_score(),
                };
            }
        }
        if let Some(v) = &p.persona {
            spec.persona = v.clone();
        }
        if let Some(v) = &p.instruction {
            spec.instruction = v.clone();
        }
        if let Some(v) = &p.guidance {
            spec.guidance = v.clone();
        }
        if let Some(v) = &p.query {
            spec.query = v.clone();
        }
        spec.instruction_placement = p.placement;
        spec.validate().map_err(|e| CliError::validation(e.to_string()))?;
        Ok(spec)
    }

    /// Checks that the fields a scoring run needs are present.
    pub fn validate_for_scoring(&self) -> Result<Method, CliError> {
        let method = self.method()?;
        self.dataset()?;
        self.output()?;
        if method.is_llm() {
            self.prompt_spec()?;
            if method == Method::FlmQaScore && self.prompt_spec()?.format != PromptFormat::QaScore {
                return Err(CliError::validation("method flm-qa-score needs a qa_score prompt"));
            }
            if method != Method::FlmQaScore && self.prompt_spec()?.format == PromptFormat::QaScore {
                return Err(CliError::validation("a qa_score prompt needs method flm-qa-score"));
            }
        } else {
            let path = self
                .embedding
                .path
                .as_deref()
                .ok_or_else(|| CliError::validation(format!("method {method} needs embedding.path")))?;
            require_exists(path, "embedding file")?;
        }
        Ok(method)
    }
}

pub fn require_exists(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::validation(format!("{what} {} does not exist", path.display())))
    }
}
