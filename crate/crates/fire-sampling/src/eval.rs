//! Scoring of sample pools: pass@n and effective answers.
//!
//! Two routes to pass@n are provided and kept independent of each other:
//!
//! - [`pass_at_n_exact`]: the closed form `1 - C(N-C, n) / C(N, n)`,
//!   computed with exact big-integer binomials and converted at the end.
//! - [`pass_at_n_resampled`]: the subset-resampling protocol — draw a
//!   uniform n-subset of the pool without replacement, score 1 if any
//!   member is correct, average over problems, repeat R times, and report
//!   the mean and population standard deviation across repetitions.
//!
//! Effective answers (EA) counts distinct canonical answers in a pool;
//! every unparseable generation falls into one shared bucket.

use crate::answer::canonicalize;
use crate::checker::{Checker, Verdict};
use crate::generation::{GenerationPool, GenerationRecord};
use crate::par;
use crate::rng::{rand_below, sample_stream};
use crate::AnswerExtractor;
use num_bigint::BigUint;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("subset size {n} exceeds pool size {pool}")]
    SubsetTooLarge { n: usize, pool: usize },
    #[error("repetitions must be at least 1")]
    ZeroRepetitions,
    #[error("pool is empty")]
    EmptyPool,
    #[error("reports have mismatched axes: {0}")]
    MismatchedAxes(String),
}

/// Number of resampling repetitions used in the reference protocol.
pub const DEFAULT_REPETITIONS: usize = 10;

/// A scored pool: N generations for one problem with extracted answers and
/// verdicts aligned 1:1 with the records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplePool {
    pub problem_id: String,
    pub records: Vec<GenerationRecord>,
    /// Extracted answers; `None` is the unparseable bucket.
    pub answers: Vec<Option<String>>,
    pub verdicts: Vec<Verdict>,
    /// Sample indices that failed to generate, with the error rendered.
    #[serde(default)]
    pub failures: Vec<(u64, String)>,
}

impl SamplePool {
    /// Extract answers and verdicts for every record of a generation pool.
    /// Unparseable answers are incorrect without consulting the checker.
    pub fn score(
        problem_id: &str,
        pool: GenerationPool,
        extractor: &AnswerExtractor,
        checker: &dyn Checker,
    ) -> Self {
        let answers: Vec<Option<String>> =
            par::map_slice(&pool.records, |r| extractor.extract(&r.text));
        let verdicts: Vec<Verdict> = par::map_slice(&answers, |answer| match answer {
            Some(a) => checker.check(problem_id, a),
            None => Verdict::Incorrect,
        });
        Self {
            problem_id: problem_id.to_string(),
            records: pool.records,
            answers,
            verdicts,
            failures: pool
                .failures
                .into_iter()
                .map(|(i, e)| (i, e.to_string()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn correct_count(&self) -> usize {
        self.verdicts.iter().filter(|v| v.is_correct()).count()
    }
}

/// Exact binomial coefficient.
fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Closed-form pass@n for a pool of `pool_size` samples with `correct` of
/// them correct: `1 - C(N-C, n) / C(N, n)`.
pub fn pass_at_n_exact(pool_size: usize, correct: usize, n: usize) -> Result<f64, EvalError> {
    if n > pool_size {
        return Err(EvalError::SubsetTooLarge {
            n,
            pool: pool_size,
        });
    }
    if correct == 0 {
        return Ok(0.0);
    }
    if n > pool_size - correct {
        return Ok(1.0);
    }
    let miss = binomial((pool_size - correct) as u64, n as u64)
        .to_f64()
        .expect("binomial fits in f64 for desk-scale pools");
    let total = binomial(pool_size as u64, n as u64)
        .to_f64()
        .expect("binomial fits in f64 for desk-scale pools");
    Ok(1.0 - miss / total)
}

/// Exact pass@n of a scored pool.
pub fn pool_pass_at_n_exact(pool: &SamplePool, n: usize) -> Result<f64, EvalError> {
    pass_at_n_exact(pool.len(), pool.correct_count(), n)
}

/// Subset-resampling estimate of pass@n over a problem set.
///
/// Each repetition draws an independent n-subset per problem (without
/// replacement, from the repetition's own random stream) and scores the
/// dataset mean; the result is the mean and population standard deviation
/// across the `repetitions` dataset means.
pub fn pass_at_n_resampled(
    pools: &[&SamplePool],
    n: usize,
    repetitions: usize,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    if repetitions == 0 {
        return Err(EvalError::ZeroRepetitions);
    }
    if pools.is_empty() {
        return Err(EvalError::EmptyPool);
    }
    for pool in pools {
        if n > pool.len() {
            return Err(EvalError::SubsetTooLarge {
                n,
                pool: pool.len(),
            });
        }
    }
    let rep_means: Vec<f64> = par::map_indexed(repetitions, |rep| {
        let mut rng = sample_stream(seed, rep as u64);
        let mut hits = 0usize;
        for pool in pools {
            if subset_has_correct(pool, n, &mut rng) {
                hits += 1;
            }
        }
        hits as f64 / pools.len() as f64
    });
    let mean = rep_means.iter().sum::<f64>() / repetitions as f64;
    let variance = rep_means
        .iter()
        .map(|m| (m - mean).powi(2))
        .sum::<f64>()
        / repetitions as f64;
    Ok((mean, variance.sqrt()))
}

/// Draw a uniform n-subset by partial Fisher-Yates; consumes exactly `n`
/// draws from the stream regardless of the verdicts.
fn subset_has_correct(
    pool: &SamplePool,
    n: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> bool {
    let size = pool.len();
    let mut indices: Vec<usize> = (0..size).collect();
    for i in 0..n {
        let j = i + rand_below(rng, (size - i) as u64) as usize;
        indices.swap(i, j);
    }
    indices[..n].iter().any(|&i| pool.verdicts[i].is_correct())
}

/// Count distinct canonical answers in a pool. Unparseable answers count
/// as one distinct bucket.
pub fn effective_answers(pool: &SamplePool) -> Result<usize, EvalError> {
    if pool.is_empty() {
        return Err(EvalError::EmptyPool);
    }
    let buckets: HashSet<Option<String>> = pool
        .answers
        .iter()
        .map(|a| a.as_ref().map(|s| canonicalize(s)))
        .collect();
    Ok(buckets.len())
}

/// Per-problem effective-answer counts with the dataset mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EaReport {
    pub per_problem: Vec<(String, usize)>,
    pub mean: f64,
}

impl EaReport {
    pub fn from_pools(pools: &[&SamplePool]) -> Result<Self, EvalError> {
        if pools.is_empty() {
            return Err(EvalError::EmptyPool);
        }
        let mut per_problem = Vec::with_capacity(pools.len());
        for pool in pools {
            per_problem.push((pool.problem_id.clone(), effective_answers(pool)?));
        }
        let mean =
            per_problem.iter().map(|(_, ea)| *ea as f64).sum::<f64>() / per_problem.len() as f64;
        Ok(Self { per_problem, mean })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassMethod {
    Exact,
    Resampled,
}

/// Aggregated pass rates per n, with dispersion when resampled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassAtNReport {
    pub method: PassMethod,
    /// n -> mean pass rate over the problem set.
    pub mean: BTreeMap<usize, f64>,
    /// n -> standard deviation across repetitions (resampled only).
    pub stddev: BTreeMap<usize, f64>,
    pub repetitions: usize,
}

impl PassAtNReport {
    /// Exact dataset-level pass@n: the mean of the per-problem closed form.
    pub fn exact(pools: &[&SamplePool], ns: &[usize]) -> Result<Self, EvalError> {
        if pools.is_empty() {
            return Err(EvalError::EmptyPool);
        }
        let mut mean = BTreeMap::new();
        for &n in ns {
            let mut acc = 0.0;
            for pool in pools {
                acc += pool_pass_at_n_exact(pool, n)?;
            }
            mean.insert(n, acc / pools.len() as f64);
        }
        Ok(Self {
            method: PassMethod::Exact,
            mean,
            stddev: BTreeMap::new(),
            repetitions: 0,
        })
    }

    pub fn resampled(
        pools: &[&SamplePool],
        ns: &[usize],
        repetitions: usize,
        seed: u64,
    ) -> Result<Self, EvalError> {
        let mut mean = BTreeMap::new();
        let mut stddev = BTreeMap::new();
        for (axis, &n) in ns.iter().enumerate() {
            // Separate stream per n so estimates stay independent.
            let (m, s) = pass_at_n_resampled(
                pools,
                n,
                repetitions,
                crate::rng::mix_seed(seed, &[axis as u64]),
            )?;
            mean.insert(n, m);
            stddev.insert(n, s);
        }
        Ok(Self {
            method: PassMethod::Resampled,
            mean,
            stddev,
            repetitions,
        })
    }
}
