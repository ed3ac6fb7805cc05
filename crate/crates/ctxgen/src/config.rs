//! Declarative experiment configuration.
//!
//! A config is one flat JSON document whose defaults reproduce the published
//! experiment settings: 8 shots per label, 450 synthetic samples per label,
//! top-k sampling with k = 20 capped at 200 new tokens, 3 fine-tuning epochs
//! for both stages, 4 classifier epochs, and three fixed restart seeds.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SHOTS: usize = 8;
pub const DEFAULT_N_PER_LABEL: usize = 450;
pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_MAX_NEW_TOKENS: usize = 200;
pub const DEFAULT_QAC_EPOCHS: u32 = 3;
pub const DEFAULT_ADAPT_EPOCHS: u32 = 3;
pub const DEFAULT_CLASSIFIER_EPOCHS: u32 = 4;
/// Fixed default restart seeds; override in the config for more restarts.
pub const DEFAULT_RESTART_SEEDS: [u64; 3] = [13, 42, 77];

/// Experiment mode: the full pipeline in few- or zero-shot form, the two
/// ablations, a named baseline augmenter, or plain few-shot training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Mode {
    CondaFewShot,
    CondaZeroShot,
    AblationMinusDa,
    AblationMinusFewShot,
    Baseline(String),
    FewShotOnly,
}

impl Mode {
    /// Whether the mode samples a few-shot set at all (zero-shot skips it).
    pub fn uses_few_shot(&self) -> bool {
        !matches!(self, Mode::CondaZeroShot)
    }

    /// Whether the assembled classifier training set includes the few-shot
    /// examples.
    pub fn trains_on_few_shot(&self) -> bool {
        !matches!(self, Mode::CondaZeroShot | Mode::AblationMinusFewShot)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::CondaFewShot => write!(f, "conda_few_shot"),
            Mode::CondaZeroShot => write!(f, "conda_zero_shot"),
            Mode::AblationMinusDa => write!(f, "ablation_minus_da"),
            Mode::AblationMinusFewShot => write!(f, "ablation_minus_few_shot"),
            Mode::Baseline(name) => write!(f, "baseline:{name}"),
            Mode::FewShotOnly => write!(f, "few_shot_only"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conda_few_shot" => Ok(Mode::CondaFewShot),
            "conda_zero_shot" => Ok(Mode::CondaZeroShot),
            "ablation_minus_da" => Ok(Mode::AblationMinusDa),
            "ablation_minus_few_shot" => Ok(Mode::AblationMinusFewShot),
            "few_shot_only" => Ok(Mode::FewShotOnly),
            other => match other.strip_prefix("baseline:") {
                Some(name) if !name.is_empty() => Ok(Mode::Baseline(name.to_string())),
                _ => Err(Error::Config(format!(
                    "unknown mode `{other}`; expected conda_few_shot, conda_zero_shot, \
                     ablation_minus_da, ablation_minus_few_shot, baseline:<name>, or \
                     few_shot_only"
                ))),
            },
        }
    }
}

impl TryFrom<String> for Mode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> Self {
        m.to_string()
    }
}

/// Corpus file format accepted by ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Squad,
    #[default]
    Canonical,
}

impl FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "squad" => Ok(CorpusFormat::Squad),
            "canonical" => Ok(CorpusFormat::Canonical),
            other => Err(Error::Config(format!(
                "unknown corpus format `{other}`; expected squad or canonical"
            ))),
        }
    }
}

/// A backend or classifier selection: registry id plus free-form params.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentConfig {
    pub id: String,
    #[serde(default = "empty_params")]
    pub params: serde_json::Value,
}

fn empty_params() -> serde_json::Value {
    serde_json::json!({})
}

fn default_backend() -> ComponentConfig {
    ComponentConfig {
        id: crate::backend::CHAR_NGRAM_ID.to_string(),
        params: empty_params(),
    }
}

fn default_classifier() -> ComponentConfig {
    ComponentConfig {
        id: crate::eval::MULTINOMIAL_BOW_ID.to_string(),
        params: empty_params(),
    }
}

fn d_shots() -> usize {
    DEFAULT_SHOTS
}
fn d_n_per_label() -> usize {
    DEFAULT_N_PER_LABEL
}
fn d_k() -> usize {
    DEFAULT_TOP_K
}
fn d_max_new_tokens() -> usize {
    DEFAULT_MAX_NEW_TOKENS
}
fn d_qac_epochs() -> u32 {
    DEFAULT_QAC_EPOCHS
}
fn d_adapt_epochs() -> u32 {
    DEFAULT_ADAPT_EPOCHS
}
fn d_classifier_epochs() -> u32 {
    DEFAULT_CLASSIFIER_EPOCHS
}
fn d_restart_seeds() -> Vec<u64> {
    DEFAULT_RESTART_SEEDS.to_vec()
}

/// Full declarative description of one run.
///
/// Data paths (`qa_corpus`, `train_pool`, `test_set`, optional `task_file`
/// and `lexicon`) are resolved relative to the config file's directory by
/// the command layer. `output_dir` names where artifacts land and is
/// excluded from the config digest, which identifies the experiment itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task_id: String,
    /// Custom task spec file; built-in tasks resolve by `task_id` alone.
    #[serde(default)]
    pub task_file: Option<PathBuf>,
    pub qa_corpus: PathBuf,
    #[serde(default)]
    pub qa_format: CorpusFormat,
    pub train_pool: PathBuf,
    pub test_set: PathBuf,
    #[serde(default = "default_backend")]
    pub backend: ComponentConfig,
    #[serde(default = "default_classifier")]
    pub classifier: ComponentConfig,
    pub mode: Mode,
    #[serde(default = "d_shots")]
    pub shots: usize,
    #[serde(default = "d_n_per_label")]
    pub n_per_label: usize,
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default = "d_qac_epochs")]
    pub qac_epochs: u32,
    #[serde(default = "d_adapt_epochs")]
    pub adapt_epochs: u32,
    #[serde(default = "d_classifier_epochs")]
    pub classifier_epochs: u32,
    #[serde(default = "d_restart_seeds")]
    pub restart_seeds: Vec<u64>,
    /// Synonym lexicon for the EDA baseline.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    /// Hold out a validation set (same size as the few-shot set) and keep
    /// the best epoch. Off by default; it seldom helps at this scale.
    #[serde(default)]
    pub early_stopping: bool,
    /// Keep original casing in serialized documents and prompts.
    #[serde(default)]
    pub preserve_case: bool,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::Config("shots must be >= 1".into()));
        }
        if self.n_per_label == 0 {
            return Err(Error::Config("n_per_label must be >= 1".into()));
        }
        if self.k == 0 || self.max_new_tokens == 0 {
            return Err(Error::Config("k and max_new_tokens must be >= 1".into()));
        }
        if self.qac_epochs == 0 || self.adapt_epochs == 0 || self.classifier_epochs == 0 {
            return Err(Error::Config("epoch counts must be >= 1".into()));
        }
        if self.restart_seeds.is_empty() {
            return Err(Error::Config("restart_seeds must be non-empty".into()));
        }
        Ok(())
    }

    /// Content digest of the experiment identity: every field except
    /// `output_dir`. Two configs with equal digests describe the same
    /// experiment and must produce byte-identical results.
    pub fn digest(&self) -> String {
        let mut identity = self.clone();
        identity.output_dir = PathBuf::new();
        let json = serde_json::to_string(&identity).expect("config serializes");
        crate::backend::sha256_hex(json.as_bytes())
    }
}
