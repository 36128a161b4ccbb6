//! Grid sweep: one row per (hyperparameter cell x policy variant).
//!
//! Per-problem pool seeds are derived from the cell contents, the variant
//! name, and the problem id — not from loop indices — so duplicate grid
//! entries reproduce identical rows and reordering the problem file leaves
//! every pool unchanged.

use super::config::{Problem, RunSettings};
use super::report::{GridRow, Report};
use super::ExperimentError;
use crate::checker::Checker;
use crate::eval::{EaReport, PassAtNReport, PassMethod, SamplePool};
use crate::generation::generate_pool;
use crate::logits::SamplingConfig;
use crate::model::ModelSource;
use crate::par;
use crate::policy::{FirePolicy, TriggerRule};
use crate::rng::{hash_str, mix_seed};
use crate::AnswerExtractor;

/// One grid cell: the regular-stage transform parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellParams {
    pub temperature: f64,
    pub top_p: Option<f64>,
    pub top_k: Option<usize>,
    pub min_p: f64,
}

impl CellParams {
    pub fn regular_config(&self) -> SamplingConfig {
        SamplingConfig {
            temperature: self.temperature,
            top_k: self.top_k,
            top_p: self.top_p,
            min_p: self.min_p,
        }
    }

    /// Content-derived key: duplicate cells share seeds by construction.
    pub fn key(&self) -> u64 {
        mix_seed(
            0,
            &[
                self.temperature.to_bits(),
                self.top_p.map(f64::to_bits).unwrap_or(u64::MAX),
                self.top_k.map(|k| k as u64).unwrap_or(u64::MAX),
                self.min_p.to_bits(),
            ],
        )
    }

    /// Stable file-name fragment for this cell.
    pub fn slug(&self) -> String {
        let p = self
            .top_p
            .map(|p| format!("{p}"))
            .unwrap_or_else(|| "off".to_string());
        let k = self
            .top_k
            .map(|k| format!("{k}"))
            .unwrap_or_else(|| "off".to_string());
        format!("t{}_p{}_k{}_m{}", self.temperature, p, k, self.min_p)
    }
}

/// A policy column of the report. `initial: None` is the regular baseline.
#[derive(Debug, Clone)]
pub struct PolicyVariant {
    pub name: String,
    pub trigger: TriggerRule,
    pub initial: Option<SamplingConfig>,
}

impl PolicyVariant {
    /// Concrete policy for one problem. Flagged-position variants take the
    /// problem's own flagged step when it supplies one.
    pub fn policy_for(&self, regular: SamplingConfig, problem: &Problem) -> FirePolicy {
        match self.initial {
            None => FirePolicy::regular_only(regular),
            Some(initial) => {
                let trigger = match self.trigger {
                    TriggerRule::FlaggedPosition(default) => {
                        TriggerRule::FlaggedPosition(problem.flagged_position.unwrap_or(default))
                    }
                    other => other,
                };
                FirePolicy::new(trigger, initial, regular)
            }
        }
    }
}

/// Generate and score the per-problem pools for one (cell, variant) pair.
pub fn evaluate_cell(
    model: &dyn ModelSource,
    problems: &[Problem],
    cell: &CellParams,
    variant: &PolicyVariant,
    run: &RunSettings,
    extractor: &AnswerExtractor,
    checker: &dyn Checker,
) -> Result<Vec<SamplePool>, ExperimentError> {
    let regular = cell.regular_config();
    let results: Vec<Result<SamplePool, ExperimentError>> = par::map_slice(problems, |problem| {
        let prompt = model.prompt_tokens(&problem.prompt)?;
        let policy = variant.policy_for(regular, problem);
        let seed = mix_seed(
            run.base_seed,
            &[cell.key(), hash_str(&variant.name), hash_str(&problem.id)],
        );
        let pool = generate_pool(
            model,
            &prompt,
            &policy,
            seed,
            run.n_samples,
            run.max_tokens,
        );
        Ok(SamplePool::score(&problem.id, pool, extractor, checker))
    });
    results.into_iter().collect()
}

/// Build one report row from the scored pools of a (cell, variant) pair.
pub fn row_from_pools(
    cell: &CellParams,
    variant_name: &str,
    pools: &[SamplePool],
    run: &RunSettings,
) -> Result<GridRow, ExperimentError> {
    let refs: Vec<&SamplePool> = pools.iter().collect();
    let pass = match run.method {
        PassMethod::Exact => PassAtNReport::exact(&refs, &run.pass_at)?,
        PassMethod::Resampled => {
            // The resampling streams are keyed off the same ingredients as
            // the pool seeds, shifted so they never collide with them.
            let seed = mix_seed(
                run.base_seed,
                &[hash_str("resample"), hash_str(variant_name)],
            );
            PassAtNReport::resampled(&refs, &run.pass_at, run.repetitions, seed)?
        }
    };
    let ea = EaReport::from_pools(&refs)?;
    let failures: usize = pools.iter().map(|p| p.failures.len()).sum();
    Ok(GridRow {
        policy: variant_name.to_string(),
        temperature: cell.temperature,
        top_p: cell.top_p,
        top_k: cell.top_k,
        min_p: cell.min_p,
        pass_at: pass.mean,
        pass_stddev: pass.stddev,
        ea: ea.mean,
        error: if failures == 0 {
            None
        } else {
            Some(format!("{failures} sample(s) failed to generate"))
        },
    })
}

/// Sweep the whole grid. Per-cell failures are recorded on the row and the
/// sweep continues.
pub fn grid_evaluate(
    model: &dyn ModelSource,
    problems: &[Problem],
    cells: &[CellParams],
    variants: &[PolicyVariant],
    run: &RunSettings,
    extractor: &AnswerExtractor,
    checker: &dyn Checker,
) -> Result<Report, ExperimentError> {
    if cells.is_empty() {
        return Err(ExperimentError::Config("empty hyperparameter grid".into()));
    }
    let mut rows = Vec::with_capacity(cells.len() * variants.len());
    for cell in cells {
        for variant in variants {
            let row = evaluate_cell(model, problems, cell, variant, run, extractor, checker)
                .and_then(|pools| row_from_pools(cell, &variant.name, &pools, run));
            rows.push(match row {
                Ok(row) => row,
                Err(e) => GridRow {
                    policy: variant.name.clone(),
                    temperature: cell.temperature,
                    top_p: cell.top_p,
                    top_k: cell.top_k,
                    min_p: cell.min_p,
                    pass_at: Default::default(),
                    pass_stddev: Default::default(),
                    ea: f64::NAN,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    Ok(Report {
        n_samples: run.n_samples,
        pass_ns: run.pass_at.clone(),
        method: run.method,
        problems: problems.iter().map(|p| p.id.clone()).collect(),
        rows,
    })
}
