//! OUU result records and the cost-versus-solves comparison table.

use std::collections::BTreeMap;

use anyhow::{bail, ensure, Context, Result};
use mrdino_core::riskopt::{OptResult, Termination};
use serde::{Deserialize, Serialize};

use crate::pipeline::Evaluation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuuRecord {
    /// `MR-NO`, `MR-DINO` or `PDE-SAA`.
    pub method: String,
    pub seed: u64,
    /// SAA sample size.
    pub samples: usize,
    /// Training records behind a surrogate (zero for PDE-SAA).
    pub training_samples: usize,
    /// Snapshots behind the POD basis (zero for PDE-SAA).
    pub basis_samples: usize,
    /// Distinct state solves consumed: training-stream solves for a
    /// surrogate, instrumented optimizer solves for PDE-SAA.
    pub solve_cost: usize,
    pub beta: f64,
    pub eps: f64,
    pub z: Vec<f64>,
    pub t: Option<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub termination: String,
    pub evaluations: usize,
    pub state_solves: usize,
    pub adjoint_solves: usize,
    pub config_hash: String,
    pub model_hash: Option<String>,
    pub evaluation: Option<Evaluation>,
    /// Wall-clock seconds; the only nondeterministic fields.
    pub timing: BTreeMap<String, f64>,
}

pub fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::IterationCap => "iteration-cap",
        Termination::LineSearchFailure => "line-search-failure",
    }
}

pub struct RecordSource<'a> {
    pub method: &'a str,
    pub seed: u64,
    pub samples: usize,
    pub training_samples: usize,
    pub basis_samples: usize,
    pub config_hash: &'a str,
    pub model_hash: Option<String>,
}

impl OuuRecord {
    pub fn new(src: RecordSource<'_>, res: &OptResult, beta: f64, eps: f64, seconds: f64) -> Self {
        let solve_cost = if src.method == "PDE-SAA" {
            res.state_solves
        } else {
            src.training_samples.max(src.basis_samples)
        };
        Self {
            method: src.method.into(),
            seed: src.seed,
            samples: src.samples,
            training_samples: src.training_samples,
            basis_samples: src.basis_samples,
            solve_cost,
            beta,
            eps,
            z: res.z.as_slice().to_vec(),
            t: res.t,
            objective: res.value,
            iterations: res.iterations,
            termination: termination_name(res.termination).into(),
            evaluations: res.evaluations,
            state_solves: res.state_solves,
            adjoint_solves: res.adjoint_solves,
            config_hash: src.config_hash.into(),
            model_hash: src.model_hash,
            evaluation: None,
            timing: BTreeMap::from([("optimize_seconds".to_string(), seconds)]),
        }
    }

    /// Size label used for grouping: training records for surrogates, the
    /// SAA sample size for PDE-SAA.
    pub fn size(&self) -> usize {
        if self.method == "PDE-SAA" {
            self.samples
        } else {
            self.training_samples
        }
    }

    pub fn evaluated_cost(&self) -> Result<f64> {
        Ok(self
            .evaluation
            .as_ref()
            .with_context(|| format!("{} seed {} has not been evaluated", self.method, self.seed))?
            .cvar)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub size: usize,
    pub seed: u64,
    pub solve_cost: usize,
    pub cost: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub size: usize,
    pub runs: usize,
    pub mean_solve_cost: f64,
    pub mean_rel_error: f64,
    pub std_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reference_cost: f64,
    pub rows: Vec<CompareRow>,
    pub summary: Vec<SummaryRow>,
}

/// Relative optimal cost error `|J(z) - J(z_ref)| / |J(z_ref)|` of every
/// record against the reference, all scored on one evaluation set.
pub fn compare(reference: &OuuRecord, results: &[OuuRecord]) -> Result<Comparison> {
    let ref_eval = reference
        .evaluation
        .as_ref()
        .context("reference has not been evaluated")?;
    let ref_cost = ref_eval.cvar;
    ensure!(ref_cost != 0.0, "reference cost is zero");
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        let e = r
            .evaluation
            .as_ref()
            .with_context(|| format!("{} seed {} not evaluated", r.method, r.seed))?;
        if (e.seed, e.n, e.beta.to_bits()) != (ref_eval.seed, ref_eval.n, ref_eval.beta.to_bits()) {
            bail!(
                "{} seed {} was evaluated on a different sample set than the reference",
                r.method,
                r.seed
            );
        }
        rows.push(CompareRow {
            method: r.method.clone(),
            size: r.size(),
            seed: r.seed,
            solve_cost: r.solve_cost,
            cost: e.cvar,
            rel_error: (e.cvar - ref_cost).abs() / ref_cost.abs(),
        });
    }
    let mut groups: BTreeMap<(String, usize), Vec<&CompareRow>> = BTreeMap::new();
    for row in &rows {
        groups.entry((row.method.clone(), row.size)).or_default().push(row);
    }
    let summary = groups
        .into_iter()
        .map(|((method, size), g)| {
            let n = g.len() as f64;
            let mean = g.iter().map(|r| r.rel_error).sum::<f64>() / n;
            let var = g.iter().map(|r| (r.rel_error - mean).powi(2)).sum::<f64>() / n;
            SummaryRow {
                method,
                size,
                runs: g.len(),
                mean_solve_cost: g.iter().map(|r| r.solve_cost as f64).sum::<f64>() / n,
                mean_rel_error: mean,
                std_rel_error: var.sqrt(),
            }
        })
        .collect();
    Ok(Comparison {
        reference_cost: ref_cost,
        rows,
        summary,
    })
}

impl Comparison {
    /// Columns: method, size, seed, solve_cost, cost, rel_error.
    pub fn rows_csv(&self) -> String {
        let mut s = String::from("method,size,seed,solve_cost,cost,rel_error\n");
        for r in &self.rows {
            s += &format!(
                "{},{},{},{},{:e},{:e}\n",
                r.method, r.size, r.seed, r.solve_cost, r.cost, r.rel_error
            );
        }
        s
    }

    /// Columns: method, size, runs, mean_solve_cost, mean_rel_error, std_rel_error.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,size,runs,mean_solve_cost,mean_rel_error,std_rel_error\n");
        for r in &self.summary {
            s += &format!(
                "{},{},{},{},{:e},{:e}\n",
                r.method, r.size, r.runs, r.mean_solve_cost, r.mean_rel_error, r.std_rel_error
            );
        }
        s
    }
}
