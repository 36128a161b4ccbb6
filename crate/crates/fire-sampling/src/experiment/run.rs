//! Experiment execution and artifact IO.
//!
//! Layout of the output directory:
//!
//! ```text
//! out/
//!   manifest.json            config hash, seeds, versions
//!   report.json              full report
//!   report.csv               same rows, flat
//!   pools/<cell>__<policy>.jsonl   one generation per line
//! ```
//!
//! Nothing in the artifacts depends on wall-clock time or iteration order,
//! so re-running the same config against a local model source reproduces
//! every file byte for byte. With `--resume`, existing pool files are
//! loaded back instead of regenerated and the reports are recomputed from
//! them.

use super::config::{CheckerConfig, ExperimentConfig, ModelConfig, Problem};
use super::grid::{evaluate_cell, row_from_pools, CellParams, PolicyVariant};
use super::report::{GridRow, Report};
use super::{ExperimentError, REMOTE_TOKEN_ENV};
use crate::checker::{Checker, CommandChecker, ExactMatchChecker, Verdict};
use crate::eval::SamplePool;
use crate::generation::{FinishReason, GenerationRecord};
use crate::model::{ModelSource, NGramModel, TableModel, TableModelSpec};
use crate::remote::RemoteModel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyFilter {
    Regular,
    Fire,
    #[default]
    Both,
}

impl PolicyFilter {
    fn keeps(&self, variant: &PolicyVariant) -> bool {
        match self {
            PolicyFilter::Both => true,
            PolicyFilter::Regular => variant.initial.is_none(),
            PolicyFilter::Fire => variant.initial.is_some(),
        }
    }
}

impl std::fmt::Display for PolicyFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PolicyFilter::Regular => "regular",
            PolicyFilter::Fire => "fire",
            PolicyFilter::Both => "both",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config's `output` directory when set.
    pub out_dir: Option<PathBuf>,
    pub seed_override: Option<u64>,
    pub policy: PolicyFilter,
    pub resume: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: Some(out_dir.into()),
            ..Self::default()
        }
    }
}

/// Record of a finished run, sufficient to re-run it bit-exactly: hash of
/// the config file, the resolved seed, and the code version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub crate_version: String,
    pub config_sha256: String,
    pub base_seed: u64,
    pub policy: String,
    pub cells: usize,
    pub variants: Vec<String>,
    pub problems: usize,
}

/// One generation as persisted in a pool file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolLine {
    pub problem_id: String,
    pub sample_index: u64,
    pub seed: u64,
    pub policy: String,
    pub text: String,
    pub answer: Option<String>,
    pub verdict: Verdict,
    pub fired_at: Option<usize>,
    pub finish: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn load_problems(path: &Path) -> Result<Vec<Problem>, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
    let mut problems = Vec::new();
    let mut ids = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let problem: Problem = serde_json::from_str(line).map_err(|e| {
            ExperimentError::Config(format!(
                "bad problem at {}:{}: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        if !ids.insert(problem.id.clone()) {
            return Err(ExperimentError::Config(format!(
                "duplicate problem id {:?}",
                problem.id
            )));
        }
        problems.push(problem);
    }
    if problems.is_empty() {
        return Err(ExperimentError::Config(format!(
            "problem set {} is empty",
            path.display()
        )));
    }
    Ok(problems)
}

fn build_model(
    config: &ModelConfig,
    config_dir: &Path,
) -> Result<Box<dyn ModelSource>, ExperimentError> {
    match config {
        ModelConfig::Table { path } => {
            let path = config_dir.join(path);
            let text = fs::read_to_string(&path).map_err(|e| ExperimentError::io(&path, e))?;
            let spec: TableModelSpec = serde_json::from_str(&text).map_err(|e| {
                ExperimentError::Model(crate::model::ModelError::InvalidDefinition(format!(
                    "{}: {e}",
                    path.display()
                )))
            })?;
            Ok(Box::new(TableModel::from_spec(spec)?))
        }
        ModelConfig::Ngram {
            corpus,
            order,
            alpha,
            tokenizer,
        } => {
            let path = config_dir.join(corpus);
            let text = fs::read_to_string(&path).map_err(|e| ExperimentError::io(&path, e))?;
            Ok(Box::new(NGramModel::train(&text, *order, *alpha, *tokenizer)?))
        }
        ModelConfig::Remote {
            url,
            logprobs_width,
            timeout_secs,
            max_retries,
            max_in_flight,
            end_token,
        } => Ok(Box::new(
            RemoteModel::builder(url)
                .logprobs_width(*logprobs_width)
                .timeout(Duration::from_secs(*timeout_secs))
                .max_retries(*max_retries)
                .max_in_flight(*max_in_flight)
                .end_token_text(end_token)
                .auth_token(std::env::var(REMOTE_TOKEN_ENV).ok())
                .build(),
        )),
    }
}

fn build_checker(
    config: &CheckerConfig,
    problems: &[Problem],
) -> Result<Box<dyn Checker>, ExperimentError> {
    match config {
        CheckerConfig::ExactMatch => {
            let references: Vec<(String, String)> = problems
                .iter()
                .filter_map(|p| p.answer.as_ref().map(|a| (p.id.clone(), a.clone())))
                .collect();
            if references.is_empty() {
                return Err(ExperimentError::Checker(
                    "exact_match checker needs problems with reference answers".into(),
                ));
            }
            Ok(Box::new(ExactMatchChecker::new(references)))
        }
        CheckerConfig::Command {
            command,
            timeout_secs,
        } => {
            if command.is_empty() {
                return Err(ExperimentError::Checker("checker command is empty".into()));
            }
            Ok(Box::new(CommandChecker::new(
                command.clone(),
                Duration::from_secs(*timeout_secs),
            )))
        }
    }
}

fn pool_file_name(cell: &CellParams, variant: &str) -> String {
    format!("{}__{}.jsonl", cell.slug(), variant)
}

fn pools_to_lines(pools: &[SamplePool], variant: &str) -> Vec<PoolLine> {
    let mut lines = Vec::new();
    for pool in pools {
        for (i, record) in pool.records.iter().enumerate() {
            lines.push(PoolLine {
                problem_id: pool.problem_id.clone(),
                sample_index: record.sample_index,
                seed: record.seed,
                policy: variant.to_string(),
                text: record.text.clone(),
                answer: pool.answers[i].clone(),
                verdict: pool.verdicts[i],
                fired_at: record.fired_at,
                finish: record.finish,
                error: None,
            });
        }
        for (index, message) in &pool.failures {
            lines.push(PoolLine {
                problem_id: pool.problem_id.clone(),
                sample_index: *index,
                seed: 0,
                policy: variant.to_string(),
                text: String::new(),
                answer: None,
                verdict: Verdict::Error,
                fired_at: None,
                finish: FinishReason::MaxTokens,
                error: Some(message.clone()),
            });
        }
    }
    lines
}

/// Rebuild scored pools from persisted lines (answers and verdicts carry
/// all the information the estimators need).
fn pools_from_lines(lines: &[PoolLine], problems: &[Problem]) -> Vec<SamplePool> {
    let mut by_problem: BTreeMap<&str, Vec<&PoolLine>> = BTreeMap::new();
    for line in lines {
        by_problem.entry(&line.problem_id).or_default().push(line);
    }
    let mut pools = Vec::new();
    for problem in problems {
        let lines = by_problem.remove(problem.id.as_str()).unwrap_or_default();
        let mut pool = SamplePool {
            problem_id: problem.id.clone(),
            records: Vec::new(),
            answers: Vec::new(),
            verdicts: Vec::new(),
            failures: Vec::new(),
        };
        for line in lines {
            if let Some(error) = &line.error {
                pool.failures.push((line.sample_index, error.clone()));
                continue;
            }
            pool.records.push(GenerationRecord {
                prompt: String::new(),
                tokens: Vec::new(),
                text: line.text.clone(),
                stages: Vec::new(),
                seed: line.seed,
                sample_index: line.sample_index,
                fired_at: line.fired_at,
                finish: line.finish,
            });
            pool.answers.push(line.answer.clone());
            pool.verdicts.push(line.verdict);
        }
        pools.push(pool);
    }
    pools
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(|e| ExperimentError::io(path, e))
}

/// Run the whole experiment described by `config_path`, writing pools,
/// reports, and the manifest into the resolved output directory.
pub fn run_experiment(
    config_path: &Path,
    options: &RunOptions,
) -> Result<Report, ExperimentError> {
    let config_text =
        fs::read_to_string(config_path).map_err(|e| ExperimentError::io(config_path, e))?;
    let mut config = ExperimentConfig::parse(&config_text)?;
    if let Some(seed) = options.seed_override {
        config.run.base_seed = seed;
    }
    let config_dir = config_path.parent().unwrap_or(Path::new("."));
    let out_dir = options.out_dir.clone().unwrap_or_else(|| {
        config_dir.join(config.output.as_deref().unwrap_or("out"))
    });

    let problems = load_problems(&config_dir.join(&config.problems.path))?;
    let model = build_model(&config.model, config_dir)?;
    let extractor = config.build_extractor()?;
    let checker = build_checker(&config.checker, &problems)?;

    let cells = config.cells();
    let variants: Vec<PolicyVariant> = config
        .policy_variants()
        .into_iter()
        .filter(|v| options.policy.keeps(v))
        .collect();
    if variants.is_empty() {
        return Err(ExperimentError::Config(format!(
            "policy filter {} leaves no variants",
            options.policy
        )));
    }

    let pools_dir = out_dir.join("pools");
    fs::create_dir_all(&pools_dir).map_err(|e| ExperimentError::io(&pools_dir, e))?;

    let mut rows: Vec<GridRow> = Vec::new();
    for cell in &cells {
        for variant in &variants {
            let pool_path = pools_dir.join(pool_file_name(cell, &variant.name));
            let pools = if options.resume && pool_path.exists() {
                let text = fs::read_to_string(&pool_path)
                    .map_err(|e| ExperimentError::io(&pool_path, e))?;
                let lines: Vec<PoolLine> = text
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(serde_json::from_str)
                    .collect::<Result<_, _>>()
                    .map_err(|e| {
                        ExperimentError::Config(format!(
                            "bad pool line in {}: {e}",
                            pool_path.display()
                        ))
                    })?;
                pools_from_lines(&lines, &problems)
            } else {
                let pools = evaluate_cell(
                    model.as_ref(),
                    &problems,
                    cell,
                    variant,
                    &config.run,
                    &extractor,
                    checker.as_ref(),
                )?;
                let mut text = String::new();
                for line in pools_to_lines(&pools, &variant.name) {
                    text.push_str(&serde_json::to_string(&line).expect("pool line serializes"));
                    text.push('\n');
                }
                write_file(&pool_path, &text)?;
                pools
            };
            rows.push(row_from_pools(cell, &variant.name, &pools, &config.run)?);
        }
    }

    let report = Report {
        n_samples: config.run.n_samples,
        pass_ns: config.run.pass_at.clone(),
        method: config.run.method,
        problems: problems.iter().map(|p| p.id.clone()).collect(),
        rows,
    };

    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        base_seed: config.run.base_seed,
        policy: options.policy.to_string(),
        cells: cells.len(),
        variants: variants.iter().map(|v| v.name.clone()).collect(),
        problems: problems.len(),
    };

    let mut manifest_json =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_json.push('\n');
    write_file(&out_dir.join("manifest.json"), &manifest_json)?;
    write_file(&out_dir.join("report.json"), &report.to_json())?;
    write_file(&out_dir.join("report.csv"), &report.to_csv())?;
    Ok(report)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
