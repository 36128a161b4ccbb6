//! Experiment configuration schema (TOML) and validation.
//!
//! Unknown keys are rejected everywhere, and the whole config is validated
//! before any generation starts. See the repository README for the full
//! schema.

use super::ExperimentError;
use crate::eval::{PassMethod, DEFAULT_REPETITIONS};
use crate::generation::DEFAULT_MAX_TOKENS;
use crate::logits::SamplingConfig;
use crate::model::{Tokenizer, DEFAULT_NGRAM_ALPHA, DEFAULT_NGRAM_ORDER};
use crate::policy::{TriggerRule, DEFAULT_INITIAL_TEMPERATURE, DEFAULT_INITIAL_TOP_K};
use crate::remote::{
    DEFAULT_LOGPROBS_WIDTH, DEFAULT_MAX_IN_FLIGHT, DEFAULT_MAX_RETRIES,
};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub problems: ProblemsConfig,
    /// Output directory, resolved against the config file's directory.
    /// Overridden by the CLI `--out` flag; defaults to `out`.
    #[serde(default)]
    pub output: Option<String>,
    pub sampling: SamplingAxes,
    #[serde(default)]
    pub fire: FireConfig,
    #[serde(default)]
    pub variants: Vec<VariantConfig>,
    pub run: RunSettings,
    #[serde(default)]
    pub extractor: ExtractorConfig,
    #[serde(default)]
    pub checker: CheckerConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Explicit table model serialized as JSON (`TableModelSpec`).
    Table { path: String },
    Ngram {
        corpus: String,
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_tokenizer")]
        tokenizer: Tokenizer,
    },
    Remote {
        url: String,
        #[serde(default = "default_width")]
        logprobs_width: usize,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_retries")]
        max_retries: u32,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        #[serde(default = "default_remote_end_token")]
        end_token: String,
    },
}

fn default_order() -> usize {
    DEFAULT_NGRAM_ORDER
}
fn default_alpha() -> f64 {
    DEFAULT_NGRAM_ALPHA
}
fn default_tokenizer() -> Tokenizer {
    Tokenizer::Whitespace
}
fn default_width() -> usize {
    DEFAULT_LOGPROBS_WIDTH
}
fn default_timeout_secs() -> u64 {
    30
}
fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}
fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}
fn default_remote_end_token() -> String {
    crate::remote::DEFAULT_END_TOKEN_TEXT.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemsConfig {
    pub path: String,
}

/// Grid axes for the regular stage. The cartesian product of the three
/// lists defines the grid; `temperature` applies to every cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingAxes {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    pub top_p: Vec<f64>,
    pub top_k: Vec<usize>,
    pub min_p: Vec<f64>,
}

fn default_temperature() -> f64 {
    1.0
}

/// Hot-stage settings shared by all FIRE variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FireConfig {
    #[serde(default = "default_trigger")]
    pub trigger: TriggerRule,
    #[serde(default = "default_initial_temperature")]
    pub initial_temperature: f64,
    #[serde(default = "default_initial_top_k")]
    pub initial_top_k: usize,
}

impl Default for FireConfig {
    fn default() -> Self {
        Self {
            trigger: TriggerRule::FirstToken,
            initial_temperature: DEFAULT_INITIAL_TEMPERATURE,
            initial_top_k: DEFAULT_INITIAL_TOP_K,
        }
    }
}

fn default_trigger() -> TriggerRule {
    TriggerRule::FirstToken
}
fn default_initial_temperature() -> f64 {
    DEFAULT_INITIAL_TEMPERATURE
}
fn default_initial_top_k() -> usize {
    DEFAULT_INITIAL_TOP_K
}

/// A named FIRE variant (for mid-sequence trigger experiments). The hot
/// stage inherits `[fire]` settings unless overridden here.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub name: String,
    pub trigger: TriggerRule,
    #[serde(default)]
    pub initial_temperature: Option<f64>,
    #[serde(default)]
    pub initial_top_k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub n_samples: usize,
    pub base_seed: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "default_pass_at")]
    pub pass_at: Vec<usize>,
    #[serde(default = "default_method")]
    pub method: PassMethod,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
}

fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}
fn default_pass_at() -> Vec<usize> {
    vec![1, 5, 10, 20, 30, 40]
}
fn default_method() -> PassMethod {
    PassMethod::Exact
}
fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractorConfig {
    #[serde(default)]
    pub mode: ExtractorMode,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorMode {
    #[default]
    LastNumber,
    Passthrough,
    Regex(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckerConfig {
    /// Compare against the `answer` field of each problem.
    #[default]
    ExactMatch,
    Command {
        command: Vec<String>,
        #[serde(default = "default_checker_timeout")]
        timeout_secs: u64,
    },
}

fn default_checker_timeout() -> u64 {
    10
}

/// One benchmark problem. `answer` feeds the exact-match checker;
/// `flagged_position` supplies the per-problem trigger step for
/// flagged-position variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub id: String,
    pub prompt: String,
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default)]
    pub flagged_position: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.sampling.top_p.is_empty()
            || self.sampling.top_k.is_empty()
            || self.sampling.min_p.is_empty()
        {
            return bad("sampling axes must be non-empty".into());
        }
        for cell in self.cells() {
            cell.regular_config()
                .validate()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        if self.run.n_samples == 0 {
            return bad("run.n_samples must be at least 1".into());
        }
        if self.run.max_tokens == 0 {
            return bad("run.max_tokens must be at least 1".into());
        }
        if self.run.pass_at.is_empty() {
            return bad("run.pass_at must list at least one n".into());
        }
        for &n in &self.run.pass_at {
            if n == 0 || n > self.run.n_samples {
                return bad(format!(
                    "run.pass_at entry {n} outside 1..={}",
                    self.run.n_samples
                ));
            }
        }
        if self.run.method == PassMethod::Resampled && self.run.repetitions == 0 {
            return bad("run.repetitions must be at least 1 for the resampled method".into());
        }
        self.fire
            .trigger
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        let mut names = HashSet::new();
        names.insert("regular".to_string());
        for variant in &self.variants {
            variant
                .trigger
                .validate()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
            if !names.insert(variant.name.clone()) {
                return bad(format!("duplicate variant name {:?}", variant.name));
            }
        }
        if let ExtractorMode::Regex(pattern) = &self.extractor.mode {
            crate::answer::AnswerExtractor::regex(pattern)
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        if let CheckerConfig::Command { command, .. } = &self.checker {
            if command.is_empty() {
                return Err(ExperimentError::Checker(
                    "checker command must not be empty".into(),
                ));
            }
        }
        if let ModelConfig::Ngram { order, alpha, .. } = &self.model {
            if !(2..=5).contains(order) {
                return bad(format!("ngram order must be 2..=5, got {order}"));
            }
            if !alpha.is_finite() || *alpha <= 0.0 {
                return bad(format!("ngram alpha must be positive, got {alpha}"));
            }
        }
        Ok(())
    }

    /// Cartesian product of the sampling axes, in axis order.
    pub fn cells(&self) -> Vec<super::CellParams> {
        let mut cells = Vec::new();
        for &p in &self.sampling.top_p {
            for &k in &self.sampling.top_k {
                for &m in &self.sampling.min_p {
                    cells.push(super::CellParams {
                        temperature: self.sampling.temperature,
                        top_p: Some(p),
                        top_k: if k == 0 { None } else { Some(k) },
                        min_p: m,
                    });
                }
            }
        }
        cells
    }

    /// Resolved policy variants: the regular baseline first, then either the
    /// configured named variants or the single default FIRE variant.
    pub fn policy_variants(&self) -> Vec<super::PolicyVariant> {
        let mut variants = vec![super::PolicyVariant {
            name: "regular".to_string(),
            trigger: TriggerRule::Never,
            initial: None,
        }];
        if self.variants.is_empty() {
            variants.push(super::PolicyVariant {
                name: "fire".to_string(),
                trigger: self.fire.trigger,
                initial: Some(self.fire_initial(None, None)),
            });
        } else {
            for v in &self.variants {
                variants.push(super::PolicyVariant {
                    name: v.name.clone(),
                    trigger: v.trigger,
                    initial: Some(self.fire_initial(v.initial_temperature, v.initial_top_k)),
                });
            }
        }
        variants
    }

    fn fire_initial(&self, temperature: Option<f64>, top_k: Option<usize>) -> SamplingConfig {
        SamplingConfig::new(temperature.unwrap_or(self.fire.initial_temperature))
            .with_top_k(top_k.unwrap_or(self.fire.initial_top_k))
    }

    pub fn build_extractor(&self) -> Result<crate::AnswerExtractor, ExperimentError> {
        match &self.extractor.mode {
            ExtractorMode::LastNumber => Ok(crate::AnswerExtractor::LastNumber),
            ExtractorMode::Passthrough => Ok(crate::AnswerExtractor::Passthrough),
            ExtractorMode::Regex(pattern) => crate::AnswerExtractor::regex(pattern)
                .map_err(|e| ExperimentError::Config(e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
        [model]
        kind = "table"
        path = "model.json"

        [problems]
        path = "problems.jsonl"

        [sampling]
        top_p = [0.9]
        top_k = [16]
        min_p = [0.0]

        [run]
        n_samples = 4
        base_seed = 7
        pass_at = [1, 2, 4]
    "#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(config.run.max_tokens, DEFAULT_MAX_TOKENS);
        assert_eq!(config.fire.initial_temperature, 30.0);
        assert_eq!(config.fire.initial_top_k, 16);
        assert_eq!(config.fire.trigger, TriggerRule::FirstToken);
        let variants = config.policy_variants();
        assert_eq!(variants.len(), 2);
        assert_eq!(variants[0].name, "regular");
        assert_eq!(variants[1].name, "fire");
        assert_eq!(config.cells().len(), 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("base_seed = 7", "base_seed = 7\nbogus_key = 1");
        let err = ExperimentConfig::parse(&bad).unwrap_err();
        assert!(matches!(err, ExperimentError::Config(_)));
    }

    #[test]
    fn pass_at_beyond_pool_rejected() {
        let bad = MINIMAL.replace("pass_at = [1, 2, 4]", "pass_at = [1, 8]");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn grid_product_counts() {
        let wide = MINIMAL
            .replace("top_p = [0.9]", "top_p = [0.7, 0.9]")
            .replace("top_k = [16]", "top_k = [16, 32]")
            .replace("min_p = [0.0]", "min_p = [0.0, 0.01]");
        let config = ExperimentConfig::parse(&wide).unwrap();
        assert_eq!(config.cells().len(), 8);
        // x2 policies = 16 report rows.
        assert_eq!(config.cells().len() * config.policy_variants().len(), 16);
    }

    #[test]
    fn top_k_zero_means_disabled() {
        let cfg = MINIMAL.replace("top_k = [16]", "top_k = [0]");
        let config = ExperimentConfig::parse(&cfg).unwrap();
        assert_eq!(config.cells()[0].top_k, None);
    }

    #[test]
    fn named_variants_parse() {
        let with_variants = format!(
            "{MINIMAL}\n[[variants]]\nname = \"1st-line\"\ntrigger = {{ sentence_start = 1 }}\n\n[[variants]]\nname = \"prm\"\ntrigger = {{ flagged_position = 2 }}\n"
        );
        let config = ExperimentConfig::parse(&with_variants).unwrap();
        let variants = config.policy_variants();
        assert_eq!(variants.len(), 3);
        assert_eq!(variants[1].trigger, TriggerRule::SentenceStart(1));
        assert_eq!(variants[2].trigger, TriggerRule::FlaggedPosition(2));
    }

    #[test]
    fn duplicate_variant_names_rejected() {
        let dup = format!(
            "{MINIMAL}\n[[variants]]\nname = \"v\"\ntrigger = \"first_token\"\n\n[[variants]]\nname = \"v\"\ntrigger = \"never\"\n"
        );
        assert!(ExperimentConfig::parse(&dup).is_err());
    }

    #[test]
    fn bad_regex_rejected() {
        let bad = format!("{MINIMAL}\n[extractor]\nmode = {{ regex = \"(\" }}\n");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn empty_checker_command_is_checker_error() {
        let bad = format!("{MINIMAL}\n[checker]\nkind = \"command\"\ncommand = []\n");
        let err = ExperimentConfig::parse(&bad).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn remote_model_config_parses() {
        let remote = MINIMAL.replace(
            "kind = \"table\"\n        path = \"model.json\"",
            "kind = \"remote\"\n        url = \"http://localhost:9000\"",
        );
        let config = ExperimentConfig::parse(&remote).unwrap();
        match config.model {
            ModelConfig::Remote { logprobs_width, .. } => {
                assert_eq!(logprobs_width, DEFAULT_LOGPROBS_WIDTH)
            }
            _ => panic!("expected remote model"),
        }
    }
}
