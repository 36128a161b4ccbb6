//! FIRE sampling: flaming-hot initiation with regular execution.
//!
//! This crate implements a decoding-control library built around a single
//! idea: sample the first generated token at a very high temperature (with
//! top-k filtering to keep candidates plausible), then continue decoding
//! under a regular sampling configuration. Spreading probability mass over
//! the initial token raises the diversity of a pool of samples, which in
//! turn raises best-of-N pass rates even though single-sample accuracy may
//! drop.
//!
//! The pieces:
//!
//! - [`logits`]: exact, composable transforms from raw logits to a
//!   normalized sampling distribution (temperature, top-k, top-p, min-p).
//! - [`policy`]: position-dependent selection of which sampling config
//!   governs each decoding step (first-token, sentence-start, flagged
//!   position, or never).
//! - [`model`] / [`remote`]: pluggable deterministic model sources — an
//!   explicit table, an additive-smoothed n-gram model, and a client for
//!   completions-style HTTP servers that return top logprobs.
//! - [`generation`]: the seeded, reproducible decode loop and pool
//!   generation.
//! - [`answer`], [`checker`], [`eval`]: answer extraction, correctness
//!   verdicts, pass@n (exact hypergeometric and subset-resampled), and the
//!   effective-answers diversity metric.
//! - [`experiment`]: a config-driven grid runner that writes pools,
//!   reports, and a manifest for bit-exact re-runs.
//!
//! Pool generation, grid sweeps, scoring, and the resampling estimator
//! fan out with rayon when the default `parallel` feature is enabled;
//! disabling it yields a fully sequential build with identical outputs.

pub mod answer;
pub mod checker;
pub mod eval;
pub mod experiment;
pub mod generation;
pub mod logits;
pub mod model;
pub mod policy;
pub mod remote;
pub mod rng;

mod par;

pub use answer::AnswerExtractor;
pub use checker::{Checker, CommandChecker, ExactMatchChecker, Verdict};
pub use eval::{EaReport, PassAtNReport, SamplePool};
pub use generation::{generate, generate_pool, FinishReason, GenerationRecord};
pub use logits::{
    apply_temperature, build_distribution, min_p_filter, top_k_filter, top_p_filter, ConfigError,
    Distribution, LogitVector, SamplingConfig,
};
pub use model::{ModelSource, NGramModel, TableModel, TokenId, Tokenizer, Vocabulary};
pub use policy::{FirePolicy, Stage, TriggerRule, TriggerState};
pub use remote::RemoteModel;
