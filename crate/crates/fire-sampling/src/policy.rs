//! Position-dependent choice of sampling configuration.
//!
//! A [`FirePolicy`] pairs a trigger rule with two sampling configurations:
//! the hot `initial` stage (high temperature plus top-k) and the `regular`
//! stage used everywhere else. The trigger fires at most once per
//! generation; after that every step is regular, so conditioned on the same
//! prefix the post-trigger distributions are identical to the plain
//! baseline.

use crate::logits::{ConfigError, SamplingConfig};
use serde::{Deserialize, Serialize};

/// Default hot-stage temperature for the initial token.
pub const DEFAULT_INITIAL_TEMPERATURE: f64 = 30.0;

/// Default hot-stage top-k width.
pub const DEFAULT_INITIAL_TOP_K: usize = 16;

/// When the hot stage is allowed to fire.
///
/// `SentenceStart(n)` fires at the first token generated after the
/// `(n-1)`-th `.` character of the generated text, so `SentenceStart(1)`
/// is the same as `FirstToken`. Sentence boundaries are the literal `.`
/// character; abbreviations and decimals are not special-cased.
/// `FlaggedPosition` is a caller-supplied step index (e.g. the first step a
/// process reward model deemed incorrect); if the generation ends before
/// reaching it the trigger simply never fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerRule {
    FirstToken,
    SentenceStart(usize),
    FlaggedPosition(usize),
    Never,
}

impl TriggerRule {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            TriggerRule::SentenceStart(0) => Err(ConfigError::BadDistribution(
                "sentence_start requires n >= 1".to_string(),
            )),
            _ => Ok(()),
        }
    }

    /// Does the rule match at `step`, given the text generated so far?
    fn matches(&self, step: usize, generated_text: &str) -> bool {
        match *self {
            TriggerRule::FirstToken => step == 0,
            TriggerRule::SentenceStart(n) => {
                generated_text.chars().filter(|&c| c == '.').count() >= n - 1
            }
            TriggerRule::FlaggedPosition(at) => step == at,
            TriggerRule::Never => false,
        }
    }
}

/// Which configuration a step was sampled under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Hot,
    Regular,
}

/// Per-generation trigger state: whether (and where) the hot stage fired.
/// Owned by a single generation worker, never shared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TriggerState {
    fired_at: Option<usize>,
}

impl TriggerState {
    pub fn fired(&self) -> bool {
        self.fired_at.is_some()
    }

    pub fn fired_at(&self) -> Option<usize> {
        self.fired_at
    }

    /// Record that the hot stage fired at `step`. Idempotent: once fired,
    /// later calls change nothing.
    pub fn mark_fired(&mut self, step: usize) {
        if self.fired_at.is_none() {
            self.fired_at = Some(step);
        }
    }
}

/// Trigger rule plus the hot and regular sampling configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirePolicy {
    pub trigger: TriggerRule,
    pub initial: SamplingConfig,
    pub regular: SamplingConfig,
}

impl FirePolicy {
    /// Assemble a policy. Logs a warning when the initial stage is not
    /// hotter than the regular one, since that inverts the intent of a
    /// flaming-hot first step.
    pub fn new(trigger: TriggerRule, initial: SamplingConfig, regular: SamplingConfig) -> Self {
        if initial.temperature < regular.temperature {
            log::warn!(
                "initial temperature {} is below regular temperature {}",
                initial.temperature,
                regular.temperature
            );
        }
        Self {
            trigger,
            initial,
            regular,
        }
    }

    /// First-token trigger with the default hot stage (T=30, top-k 16,
    /// nucleus and min-p disabled) over the given regular configuration.
    pub fn fire_default(regular: SamplingConfig) -> Self {
        Self::new(TriggerRule::FirstToken, Self::default_initial(), regular)
    }

    /// Baseline policy: the hot stage never fires.
    pub fn regular_only(regular: SamplingConfig) -> Self {
        Self {
            trigger: TriggerRule::Never,
            initial: regular,
            regular,
        }
    }

    /// The hot stage applies only temperature and top-k by default.
    pub fn default_initial() -> SamplingConfig {
        SamplingConfig::new(DEFAULT_INITIAL_TEMPERATURE).with_top_k(DEFAULT_INITIAL_TOP_K)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.trigger.validate()?;
        self.initial.validate()?;
        self.regular.validate()
    }

    /// Select the stage for the given step. `generated_text` is the
    /// rendering of the tokens generated so far in this generation (the
    /// prompt does not count toward sentence boundaries).
    pub fn stage_for_step(&self, step: usize, generated_text: &str, state: &TriggerState) -> Stage {
        if !state.fired() && self.trigger.matches(step, generated_text) {
            Stage::Hot
        } else {
            Stage::Regular
        }
    }

    pub fn config(&self, stage: Stage) -> &SamplingConfig {
        match stage {
            Stage::Hot => &self.initial,
            Stage::Regular => &self.regular,
        }
    }

    /// The configuration governing this step: `initial` exactly when the
    /// trigger condition holds and has not yet fired, `regular` otherwise.
    pub fn config_for_step(
        &self,
        step: usize,
        generated_text: &str,
        state: &TriggerState,
    ) -> &SamplingConfig {
        self.config(self.stage_for_step(step, generated_text, state))
    }
}
