//! Run configuration: one TOML or JSON file, overridable field by field.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::Percent;
use crate::fewshot::Strategy;
use crate::llm::{ClientConfig, LlmParams};
use crate::prompt::{Budget, InstructionKind};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    #[default]
    Retrieved,
    Random,
}

/// Where demonstration examples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleSource {
    Retrieved,
    /// Uniform sample without replacement, excluding the question itself.
    Random { seed: u64 },
}

impl fmt::Display for ExampleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Retrieved => f.write_str("retrieved"),
            Self::Random { seed } => write!(f, "random(seed={seed})"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub exam: Option<PathBuf>,
    pub knowledge_index: Option<PathBuf>,
    pub bank_index: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub templates: Option<PathBuf>,
}

impl Paths {
    fn resolve_against(&mut self, base: &Path) {
        for path in [
            &mut self.exam,
            &mut self.knowledge_index,
            &mut self.bank_index,
            &mut self.store,
            &mut self.report,
            &mut self.templates,
        ]
        .into_iter()
        .flatten()
        {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

fn default_budget() -> usize {
    Budget::CONTEXT_WINDOW
}

fn default_pass() -> Percent {
    crate::eval::ExamReport::DEFAULT_PASS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_instruction")]
    pub instruction: InstructionKind,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub num_shots: usize,
    /// Candidates inspected per question under `generated-correct-ans`;
    /// defaults to four times `num_shots`.
    #[serde(default)]
    pub candidate_pool: Option<usize>,
    #[serde(default)]
    pub use_knowledge: bool,
    #[serde(default)]
    pub example_source: SourceKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Defaults to 16 for `direct` and 512 for `steps`.
    #[serde(default)]
    pub response_reserve: Option<usize>,
    /// Single-token answers restricted to `A`-`E` by logit bias.
    #[serde(default)]
    pub constrained: bool,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_pass")]
    pub pass_threshold: Percent,
    #[serde(default)]
    pub llm: ClientConfig,
    #[serde(default)]
    pub paths: Paths,
}

fn default_instruction() -> InstructionKind {
    InstructionKind::Direct
}

fn default_strategy() -> Strategy {
    Strategy::CorrectAns
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            instruction: default_instruction(),
            strategy: default_strategy(),
            num_shots: 0,
            candidate_pool: None,
            use_knowledge: false,
            example_source: SourceKind::Retrieved,
            seed: None,
            budget: default_budget(),
            response_reserve: None,
            constrained: false,
            temperature: 0.0,
            pass_threshold: default_pass(),
            llm: ClientConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Reads a `.json` file, or TOML otherwise. Relative paths inside are
    /// taken relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let parse_err = |message: String| ConfigError::Parse { path: path.to_owned(), message };
        let text = std::fs::read_to_string(path).map_err(|e| parse_err(e.to_string()))?;
        let mut config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        if let Some(dir) = path.parent() {
            config.paths.resolve_against(dir);
        }
        Ok(config)
    }

    pub fn is_zero_shot(&self) -> bool {
        self.num_shots == 0 && !self.use_knowledge
    }

    pub fn example_source(&self) -> Result<ExampleSource, ConfigError> {
        match (self.example_source, self.seed) {
            (SourceKind::Retrieved, _) => Ok(ExampleSource::Retrieved),
            (SourceKind::Random, Some(seed)) => Ok(ExampleSource::Random { seed }),
            (SourceKind::Random, None) => Err(ConfigError::Invalid("random example source requires a seed".into())),
        }
    }

    pub fn budget(&self) -> Budget {
        let default = Budget::for_instruction(self.instruction);
        Budget { total: self.budget, response_reserve: self.response_reserve.unwrap_or(default.response_reserve) }
    }

    pub fn candidate_pool(&self) -> usize {
        self.candidate_pool.unwrap_or(self.num_shots * 4).max(self.num_shots)
    }

    /// Parameters for enrichment calls: free-form text.
    pub fn generation_params(&self) -> LlmParams {
        LlmParams { temperature: self.temperature, ..LlmParams::new(self.llm.model_name.clone()) }
    }

    /// Parameters for the final answer call.
    pub fn answer_params(&self) -> LlmParams {
        if self.constrained {
            LlmParams { temperature: self.temperature, ..LlmParams::constrained(self.llm.model_name.clone()) }
        } else {
            self.generation_params()
        }
    }

    /// Short description used as the default report label.
    pub fn label(&self) -> String {
        let mut parts = vec![self.instruction.to_string()];
        if self.num_shots > 0 {
            parts.push(format!("{}-shot", self.num_shots));
            parts.push(self.strategy.to_string());
            if self.example_source == SourceKind::Random {
                parts.push("random".into());
            }
        }
        if self.use_knowledge {
            parts.push("knowledge".into());
        }
        if self.is_zero_shot() {
            parts.push("zero-shot".into());
        }
        if self.constrained {
            parts.push("constrained".into());
        }
        parts.join("/")
    }

    /// Checks everything that can be checked before any model call.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.example_source()?;
        let budget = self.budget();
        if budget.total <= budget.response_reserve {
            return invalid(format!("budget {} must exceed response reserve {}", budget.total, budget.response_reserve));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return invalid(format!("temperature {} must be >= 0", self.temperature));
        }
        if self.llm.max_concurrency == 0 {
            return invalid("llm.max_concurrency must be at least 1".into());
        }
        if self.llm.model_name.trim().is_empty() {
            return invalid("llm.model_name is empty".into());
        }
        Ok(())
    }

    /// Checks that every file the run will read exists.
    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let require = |path: &Option<PathBuf>, what: &str| -> Result<(), ConfigError> {
            match path {
                None => Err(ConfigError::Invalid(format!("paths.{what} is required"))),
                Some(p) if !p.is_file() => Err(ConfigError::Invalid(format!("paths.{what}: {} not found", p.display()))),
                Some(_) => Ok(()),
            }
        };
        require(&self.paths.exam, "exam")?;
        if self.use_knowledge {
            require(&self.paths.knowledge_index, "knowledge_index")?;
        }
        if self.num_shots > 0 {
            require(&self.paths.bank_index, "bank_index")?;
        }
        if let Some(templates) = &self.paths.templates {
            if !templates.is_file() {
                return Err(ConfigError::Invalid(format!("paths.templates: {} not found", templates.display())));
            }
        }
        Ok(())
    }
}
