//! Report rows, serialization, and report comparison.

use super::ExperimentError;
use crate::eval::{EvalError, PassMethod};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// One (cell, policy) row of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub policy: String,
    pub temperature: f64,
    pub top_p: Option<f64>,
    pub top_k: Option<usize>,
    pub min_p: f64,
    /// n -> mean pass rate in [0, 1].
    pub pass_at: BTreeMap<usize, f64>,
    /// n -> stddev across repetitions (resampled method only).
    pub pass_stddev: BTreeMap<usize, f64>,
    /// Mean effective answers per problem.
    pub ea: f64,
    #[serde(default)]
    pub error: Option<String>,
}

impl GridRow {
    fn axes_key(&self) -> (u64, u64, Option<usize>, u64) {
        (
            self.temperature.to_bits(),
            self.top_p.map(f64::to_bits).unwrap_or(u64::MAX),
            self.top_k,
            self.min_p.to_bits(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_samples: usize,
    pub pass_ns: Vec<usize>,
    pub method: PassMethod,
    /// Problem ids, in problem-file order.
    pub problems: Vec<String>,
    pub rows: Vec<GridRow>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("report serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("policy,temperature,top_p,top_k,min_p");
        for n in &self.pass_ns {
            let _ = write!(out, ",pass@{n}");
        }
        let _ = writeln!(out, ",ea@{},error", self.n_samples);
        for row in &self.rows {
            let p = row.top_p.map(|p| p.to_string()).unwrap_or_default();
            let k = row.top_k.map(|k| k.to_string()).unwrap_or_default();
            let _ = write!(
                out,
                "{},{},{},{},{}",
                csv_field(&row.policy),
                row.temperature,
                p,
                k,
                row.min_p
            );
            for n in &self.pass_ns {
                match row.pass_at.get(n) {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            let _ = writeln!(
                out,
                ",{},{}",
                row.ea,
                csv_field(row.error.as_deref().unwrap_or(""))
            );
        }
        out
    }
}

fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

/// One paired row of a report comparison: values from B minus values
/// from A.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaRow {
    pub temperature: f64,
    pub top_p: Option<f64>,
    pub top_k: Option<usize>,
    pub min_p: f64,
    pub policy_a: String,
    pub policy_b: String,
    pub pass_a: BTreeMap<usize, f64>,
    pub pass_b: BTreeMap<usize, f64>,
    pub pass_delta: BTreeMap<usize, f64>,
    pub ea_a: f64,
    pub ea_b: f64,
    pub ea_delta: f64,
    /// True when B's pass@n is at least A's for every n and B's EA is at
    /// least A's.
    pub b_geq_a: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaTable {
    pub pass_ns: Vec<usize>,
    pub rows: Vec<DeltaRow>,
}

impl DeltaTable {
    /// Plain-text rendering for the CLI.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>6} {:>6} {:>6}  delta pass@n | delta EA | B>=A",
            "cell (A->B)", "top_p", "top_k", "min_p"
        );
        for row in &self.rows {
            let cell = format!("{} -> {}", row.policy_a, row.policy_b);
            let p = row.top_p.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
            let k = row.top_k.map(|k| k.to_string()).unwrap_or_else(|| "-".into());
            let deltas: Vec<String> = self
                .pass_ns
                .iter()
                .map(|n| {
                    row.pass_delta
                        .get(n)
                        .map(|d| format!("@{n}:{d:+.4}"))
                        .unwrap_or_else(|| format!("@{n}:?"))
                })
                .collect();
            let _ = writeln!(
                out,
                "{:<24} {:>6} {:>6} {:>6}  {} | {:+.3} | {}",
                cell,
                p,
                k,
                row.min_p,
                deltas.join(" "),
                row.ea_delta,
                if row.b_geq_a { "yes" } else { "no" }
            );
        }
        out
    }
}

/// Pair up the rows of two reports and compute B - A deltas.
///
/// Requires the same problem set and the same n grid. Rows are matched by
/// (axes, policy); when the two reports cover different policies (say, a
/// regular-only run against a FIRE-only run) rows are matched by axes
/// alone, which is how Regular/FIRE columns get paired side by side.
pub fn compare_report(a: &Report, b: &Report) -> Result<DeltaTable, ExperimentError> {
    if a.pass_ns != b.pass_ns {
        return Err(EvalError::MismatchedAxes(format!(
            "pass@n grids differ: {:?} vs {:?}",
            a.pass_ns, b.pass_ns
        ))
        .into());
    }
    if a.problems != b.problems {
        return Err(EvalError::MismatchedAxes(
            "problem sets differ between reports".to_string(),
        )
        .into());
    }
    if a.n_samples != b.n_samples {
        return Err(EvalError::MismatchedAxes(format!(
            "pool sizes differ: {} vs {}",
            a.n_samples, b.n_samples
        ))
        .into());
    }

    let full_key = |r: &GridRow| (r.axes_key(), r.policy.clone());
    let a_keys: Vec<_> = a.rows.iter().map(full_key).collect();
    let b_keys: Vec<_> = b.rows.iter().map(full_key).collect();
    let same_policies = {
        let mut ka = a_keys.clone();
        let mut kb = b_keys.clone();
        ka.sort();
        kb.sort();
        ka == kb
    };

    let mut rows = Vec::new();
    for row_a in &a.rows {
        let row_b = if same_policies {
            b.rows
                .iter()
                .find(|r| r.axes_key() == row_a.axes_key() && r.policy == row_a.policy)
        } else {
            b.rows.iter().find(|r| r.axes_key() == row_a.axes_key())
        };
        let row_b = row_b.ok_or_else(|| {
            EvalError::MismatchedAxes(format!(
                "no matching row in report B for policy {:?} cell (T={}, p={:?}, k={:?}, min_p={})",
                row_a.policy, row_a.temperature, row_a.top_p, row_a.top_k, row_a.min_p
            ))
        })?;
        let mut pass_delta = BTreeMap::new();
        let mut b_geq_a = row_b.ea >= row_a.ea;
        for n in &a.pass_ns {
            match (row_a.pass_at.get(n), row_b.pass_at.get(n)) {
                (Some(&va), Some(&vb)) => {
                    pass_delta.insert(*n, vb - va);
                    if vb < va {
                        b_geq_a = false;
                    }
                }
                _ => {
                    b_geq_a = false;
                }
            }
        }
        rows.push(DeltaRow {
            temperature: row_a.temperature,
            top_p: row_a.top_p,
            top_k: row_a.top_k,
            min_p: row_a.min_p,
            policy_a: row_a.policy.clone(),
            policy_b: row_b.policy.clone(),
            pass_a: row_a.pass_at.clone(),
            pass_b: row_b.pass_at.clone(),
            pass_delta,
            ea_a: row_a.ea,
            ea_b: row_b.ea,
            ea_delta: row_b.ea - row_a.ea,
            b_geq_a,
        });
    }
    Ok(DeltaTable {
        pass_ns: a.pass_ns.clone(),
        rows,
    })
}
