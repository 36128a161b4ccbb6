//! The seeded decode loop.
//!
//! `generate` drives a [`ModelSource`] token by token under a
//! [`FirePolicy`]: each step the policy picks the hot or regular
//! configuration, the logit pipeline produces a distribution, and one token
//! is drawn by inverse CDF from the sample's private ChaCha8 stream.
//! `(model, prompt, policy, seed, max_tokens)` fully determines the record
//! for local model sources.
//!
//! `generate_pool` fans N generations out across rayon workers (with the
//! default `parallel` feature); sample `i` draws from the stream
//! `(base_seed, i)`, so the pool is reproducible and each record is
//! identical whether generated alone or in a batch.

use crate::logits::{build_distribution, ConfigError, Distribution};
use crate::model::{ModelError, ModelSource, TokenId};
use crate::par;
use crate::policy::{FirePolicy, Stage, TriggerState};
use crate::rng::{sample_stream, unit_uniform};
use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_TOKENS: usize = 512;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("model source failed at step {step}: {source}")]
    Source {
        step: usize,
        #[source]
        source: ModelError,
    },
    #[error("sampling pipeline failed at step {step}: {source}")]
    Pipeline {
        step: usize,
        #[source]
        source: ConfigError,
    },
    #[error("max_tokens must be at least 1")]
    ZeroMaxTokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    EndToken,
    MaxTokens,
}

/// One completed generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt: String,
    pub tokens: Vec<TokenId>,
    pub text: String,
    /// Stage used for each generated token.
    pub stages: Vec<Stage>,
    pub seed: u64,
    pub sample_index: u64,
    /// Step at which the hot stage fired, if it did.
    pub fired_at: Option<usize>,
    pub finish: FinishReason,
}

impl GenerationRecord {
    pub fn hot_steps(&self) -> usize {
        self.stages.iter().filter(|s| **s == Stage::Hot).count()
    }
}

/// N generations with per-sample failure annotations.
#[derive(Debug, Default)]
pub struct GenerationPool {
    pub records: Vec<GenerationRecord>,
    pub failures: Vec<(u64, GenerateError)>,
}

impl GenerationPool {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Inverse-CDF pick over the support in ascending token order: the first
/// index whose cumulative probability exceeds `u`.
fn pick_index(dist: &Distribution, u: f64) -> TokenId {
    let mut cumulative = 0.0;
    let mut last = 0;
    for i in dist.support() {
        cumulative += dist.prob(i);
        last = i;
        if u < cumulative {
            return i;
        }
    }
    // Rounding can leave the total a hair under u; fall back to the last
    // support token.
    last
}

/// Draw one token, consuming exactly one value from the stream.
pub fn sample_token<R: RngCore>(dist: &Distribution, rng: &mut R) -> TokenId {
    pick_index(dist, unit_uniform(rng))
}

fn generate_with_stream(
    model: &dyn ModelSource,
    prompt: &[TokenId],
    policy: &FirePolicy,
    seed: u64,
    sample_index: u64,
    max_tokens: usize,
) -> Result<GenerationRecord, GenerateError> {
    if max_tokens == 0 {
        return Err(GenerateError::ZeroMaxTokens);
    }
    let mut rng = sample_stream(seed, sample_index);
    let mut state = TriggerState::default();
    let mut context: Vec<TokenId> = prompt.to_vec();
    let mut stages: Vec<Stage> = Vec::new();
    let mut finish = FinishReason::MaxTokens;

    for step in 0..max_tokens {
        let generated_text = model.render(&context[prompt.len()..]);
        let stage = policy.stage_for_step(step, &generated_text, &state);
        let logits = model
            .next_logits(&context)
            .map_err(|source| GenerateError::Source { step, source })?;
        let dist = build_distribution(&logits, policy.config(stage))
            .map_err(|source| GenerateError::Pipeline { step, source })?;
        let token = sample_token(&dist, &mut rng);
        if stage == Stage::Hot {
            state.mark_fired(step);
        }
        if token == model.end_token() {
            finish = FinishReason::EndToken;
            break;
        }
        context.push(token);
        stages.push(stage);
    }

    let tokens = context[prompt.len()..].to_vec();
    let text = model.render(&tokens);
    Ok(GenerationRecord {
        prompt: model.render(prompt),
        tokens,
        text,
        stages,
        seed,
        sample_index,
        fired_at: state.fired_at(),
        finish,
    })
}

/// Generate a single completion. Equivalent to sample 0 of a pool seeded
/// with the same value.
pub fn generate(
    model: &dyn ModelSource,
    prompt: &[TokenId],
    policy: &FirePolicy,
    seed: u64,
    max_tokens: usize,
) -> Result<GenerationRecord, GenerateError> {
    generate_with_stream(model, prompt, policy, seed, 0, max_tokens)
}

/// Generate `n` completions with independent per-sample streams derived
/// from `(base_seed, sample_index)`.
pub fn generate_pool(
    model: &dyn ModelSource,
    prompt: &[TokenId],
    policy: &FirePolicy,
    base_seed: u64,
    n: usize,
    max_tokens: usize,
) -> GenerationPool {
    let results = par::map_indexed(n, |i| {
        generate_with_stream(model, prompt, policy, base_seed, i as u64, max_tokens)
    });
    let mut pool = GenerationPool::default();
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok(record) => pool.records.push(record),
            Err(err) => pool.failures.push((i as u64, err)),
        }
    }
    pool
}
