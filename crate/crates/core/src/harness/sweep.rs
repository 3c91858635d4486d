use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::fedsim::{Method, Simulation};

use super::{HarnessError, RunSpec};

/// Axes of a sweep. An absent axis keeps the base value; an empty list makes
/// the whole grid empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub nu: Option<Vec<f64>>,
    pub tau: Option<Vec<usize>>,
    #[serde(rename = "P")]
    pub perturbations: Option<Vec<usize>>,
    pub eta: Option<Vec<f64>>,
    pub method: Option<Vec<Method>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: RunSpec,
    #[serde(default)]
    pub grid: SweepGrid,
    /// Largest number of runs the sweep may launch.
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Loss level for the rounds-to-threshold column.
    #[serde(default)]
    pub threshold: Option<f64>,
}

fn default_budget() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub nu: f64,
    pub tau: usize,
    pub perturbations: usize,
    pub eta: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub min_loss: f64,
    pub rounds_to_threshold: Option<u64>,
    pub total_bytes: u64,
    pub fn_evals: u64,
}

pub const SWEEP_HEADER: &str =
    "method,nu,tau,P,eta,initial_loss,final_loss,min_loss,rounds_to_threshold,total_bytes,fn_evals";

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: SweepSpec = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        spec.base.validate()?;
        Ok(spec)
    }

    /// Every run of the grid, as full specs.
    pub fn expand(&self) -> Result<Vec<RunSpec>, HarnessError> {
        let base = &self.base.round;
        let nus = self.grid.nu.clone().unwrap_or_else(|| vec![base.hessian.nu]);
        let taus = self.grid.tau.clone().unwrap_or_else(|| vec![base.tau]);
        let ps = self.grid.perturbations.clone().unwrap_or_else(|| vec![base.perturbations]);
        let etas = self.grid.eta.clone().unwrap_or_else(|| vec![base.eta]);
        let methods = self.grid.method.clone().unwrap_or_else(|| vec![base.method]);
        let size = nus.len() * taus.len() * ps.len() * etas.len() * methods.len();
        if size > self.budget {
            return Err(HarnessError::Spec {
                field: "budget",
                reason: format!("grid has {size} runs, budget allows {}", self.budget),
            });
        }
        let mut out = Vec::with_capacity(size);
        for &method in &methods {
            for &nu in &nus {
                for &tau in &taus {
                    for &p in &ps {
                        for &eta in &etas {
                            let mut spec = self.base.clone();
                            spec.round.method = method;
                            spec.round.hessian.nu = nu;
                            spec.round.tau = tau;
                            spec.round.perturbations = p;
                            spec.round.eta = eta;
                            spec.validate()?;
                            out.push(spec);
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Runs the grid and returns one summary row per run, plus the CSV text.
pub fn sweep(spec: &SweepSpec) -> Result<(Vec<SweepRow>, String), HarnessError> {
    let runs = spec.expand()?;
    let mut rows = Vec::with_capacity(runs.len());
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for run in runs {
        let task = run.task.build().map_err(|e| HarnessError::Spec {
            field: "task",
            reason: e.to_string(),
        })?;
        let mut sim = Simulation::new(&task, run.round.clone(), run.cost)?;
        let trace = sim.run()?;
        let last = trace.records.last();
        let row = SweepRow {
            method: run.round.method,
            nu: run.round.hessian.nu,
            tau: run.round.tau,
            perturbations: run.round.perturbations,
            eta: run.round.eta,
            initial_loss: trace.initial_loss,
            final_loss: trace.final_loss(),
            min_loss: trace.losses().into_iter().fold(trace.initial_loss, f64::min),
            rounds_to_threshold: spec.threshold.and_then(|t| trace.rounds_to_reach(t)),
            total_bytes: last.map_or(0, |r| r.cumulative_bytes),
            fn_evals: last.map_or(0, |r| r.fn_evals),
        };
        writeln!(
            csv,
            "{},{},{},{},{},{:e},{:e},{:e},{},{},{}",
            match row.method {
                Method::Hiso => "hiso",
                Method::Decomfl => "decomfl",
            },
            row.nu,
            row.tau,
            row.perturbations,
            row.eta,
            row.initial_loss,
            row.final_loss,
            row.min_loss,
            row.rounds_to_threshold.map(|r| r.to_string()).unwrap_or_default(),
            row.total_bytes,
            row.fn_evals
        )
        .expect("write to string");
        rows.push(row);
    }
    Ok((rows, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"
budget = 8
threshold = 1.0

[base.task]
kind = "quadratic"
dim = 8
clients = 2

[base.round]
M = 2
m = 1
R = 4
eta = 0.01
"#;

    #[test]
    fn empty_axis_gives_header_only() {
        let spec = SweepSpec::from_toml(&format!("{SPEC}\n[grid]\nnu = []\n")).unwrap();
        let (rows, csv) = sweep(&spec).unwrap();
        assert!(rows.is_empty());
        assert_eq!(csv, format!("{SWEEP_HEADER}\n"));
    }

    #[test]
    fn grid_above_budget_refused() {
        let spec = SweepSpec::from_toml(&format!("{SPEC}\n[grid]\nnu = [0.1, 0.2, 0.3]\ntau = [1, 2, 3]\n")).unwrap();
        assert!(matches!(sweep(&spec), Err(HarnessError::Spec { field: "budget", .. })));
    }

    #[test]
    fn one_row_per_point() {
        let spec = SweepSpec::from_toml(&format!("{SPEC}\n[grid]\ntau = [1, 2]\nmethod = [\"hiso\", \"decomfl\"]\n")).unwrap();
        let (rows, csv) = sweep(&spec).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(csv.lines().count(), 5);
    }
}
