use serde::{Deserialize, Serialize};

use crate::curvature::HessianConfig;
use crate::fedsim::{FedError, Method, RoundConfig, Simulation, Trace};
use crate::ledger::CostModel;
use crate::tasks::{QuadraticSpec, Task, TaskSpec};
use crate::zo::SmoothingParams;

/// Shared setup of the convergence studies on the log-normal quadratic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySettings {
    pub task: QuadraticSpec,
    pub sampled_clients: usize,
    pub tau: usize,
    pub perturbations: usize,
    pub mu: SmoothingParams,
    pub hessian: HessianConfig,
    pub hiso_etas: Vec<f64>,
    pub decomfl_etas: Vec<f64>,
    /// Round cap for every run.
    pub max_rounds: u64,
    /// Target loss reduction factor that sizes the horizon.
    pub reduction: f64,
    pub nu_sweep: Vec<f64>,
    pub tau_sweep: Vec<usize>,
    pub seed: u64,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            task: QuadraticSpec {
                dim: 200,
                variance: 3.0,
                clients: 8,
                heterogeneity: 0.0,
                rotate: false,
                seed: 0,
            },
            sampled_clients: 4,
            tau: 1,
            perturbations: 5,
            mu: SmoothingParams::default(),
            hessian: HessianConfig::default(),
            hiso_etas: vec![1e-3, 2e-3, 4e-3, 7e-3, 1.5e-2],
            decomfl_etas: vec![1e-3, 2e-3, 4e-3, 7e-3, 1.5e-2],
            max_rounds: 4000,
            reduction: 10.0,
            nu_sweep: vec![0.01, 0.05, 0.2],
            tau_sweep: vec![1, 2, 4],
            seed: 7,
        }
    }
}

impl StudySettings {
    pub fn config(&self, method: Method, eta: f64, rounds: u64) -> RoundConfig {
        RoundConfig {
            total_clients: self.task.clients,
            sampled_clients: self.sampled_clients,
            tau: self.tau,
            perturbations: self.perturbations,
            eta,
            mu: self.mu,
            hessian: self.hessian,
            rounds,
            method,
            sampling_seed: self.seed,
            perturbation_seed: self.seed.wrapping_add(1),
            batch_seed: self.seed.wrapping_add(2),
            quantize_wire: false,
        }
    }

    pub fn build_task(&self) -> Result<Task, FedError> {
        TaskSpec::Quadratic(self.task.clone())
            .build()
            .map_err(|source| FedError::Task { round: 0, source })
    }
}

/// Runs until the loss reaches `threshold` or the round cap is hit. A run
/// that blows up counts as never reaching it.
fn run_until(task: &Task, config: RoundConfig, threshold: f64) -> Result<Trace, FedError> {
    let mut sim = Simulation::new(task, config, CostModel::default())?;
    let mut records = Vec::new();
    while sim.current_round() < sim.config().rounds {
        match sim.run_round() {
            Ok(record) => {
                let done = record.loss <= threshold;
                let diverged = !record.loss.is_finite();
                records.push(record);
                if done || diverged {
                    break;
                }
            }
            Err(FedError::Estimator { .. }) | Err(FedError::Zo { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(Trace {
        initial_loss: sim.initial_loss(),
        records,
    })
}

fn relative_range(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if values.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    (max - min) / min
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaResult {
    pub method: Method,
    pub eta: f64,
    pub rounds_to_target: Option<u64>,
    pub last_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelerationOutcome {
    pub initial_loss: f64,
    pub decomfl_eta: f64,
    /// Rounds the best plain run needs for the target reduction.
    pub horizon: u64,
    /// Plain run's loss at the horizon.
    pub threshold: f64,
    /// Fastest Hessian-informed step size, or the one with the lowest loss at
    /// the horizon if none reaches the threshold.
    pub hiso_eta: f64,
    pub hiso_rounds: Option<u64>,
    pub grid: Vec<EtaResult>,
    pub passed: bool,
}

/// Sizes the horizon `R` by the best plain run's rounds to a `reduction`-fold
/// loss decrease, then asks whether the best Hessian-informed run reaches the
/// same loss within `R / 2` rounds.
pub fn acceleration_study(settings: &StudySettings) -> Result<AccelerationOutcome, FedError> {
    let task = settings.build_task()?;
    let initial = task.global_loss(&task.initial_point());
    let target = initial / settings.reduction;
    let mut grid = Vec::new();
    let mut best: Option<(u64, f64, f64)> = None;
    for &eta in &settings.decomfl_etas {
        let trace = run_until(&task, settings.config(Method::Decomfl, eta, settings.max_rounds), target)?;
        let rounds = trace.rounds_to_reach(target);
        if let Some(r) = rounds {
            if best.is_none_or(|(b, _, _)| r < b) {
                best = Some((r, eta, trace.final_loss()));
            }
        }
        grid.push(EtaResult {
            method: Method::Decomfl,
            eta,
            rounds_to_target: rounds,
            last_loss: trace.final_loss(),
        });
    }
    let Some((horizon, decomfl_eta, threshold)) = best else {
        return Ok(AccelerationOutcome {
            initial_loss: initial,
            decomfl_eta: f64::NAN,
            horizon: settings.max_rounds,
            threshold: target,
            hiso_eta: f64::NAN,
            hiso_rounds: None,
            grid,
            passed: false,
        });
    };
    let mut hiso: Option<(u64, f64)> = None;
    let mut lowest: Option<(f64, f64)> = None;
    for &eta in &settings.hiso_etas {
        let trace = run_until(&task, settings.config(Method::Hiso, eta, horizon), threshold)?;
        let rounds = trace.rounds_to_reach(threshold);
        if let Some(r) = rounds {
            if hiso.is_none_or(|(b, _)| r < b) {
                hiso = Some((r, eta));
            }
        }
        let last = trace.final_loss();
        if last.is_finite() && lowest.is_none_or(|(l, _)| last < l) {
            lowest = Some((last, eta));
        }
        grid.push(EtaResult {
            method: Method::Hiso,
            eta,
            rounds_to_target: rounds,
            last_loss: trace.final_loss(),
        });
    }
    Ok(AccelerationOutcome {
        initial_loss: initial,
        decomfl_eta,
        horizon,
        threshold,
        hiso_eta: hiso.map(|h| h.1).or(lowest.map(|l| l.1)).unwrap_or(f64::NAN),
        hiso_rounds: hiso.map(|h| h.0),
        passed: hiso.is_some_and(|(r, _)| 2 * r <= horizon),
        grid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub rounds: u64,
    pub nu_final_losses: Vec<(f64, f64)>,
    pub nu_relative_range: f64,
    pub threshold: f64,
    pub hiso_tau_rounds: Vec<(usize, Option<u64>)>,
    pub decomfl_tau_rounds: Vec<(usize, Option<u64>)>,
    pub hiso_tau_range: f64,
    pub decomfl_tau_range: f64,
}

/// Final losses across the `nu` sweep after `rounds` rounds, and
/// rounds-to-threshold across the `tau` sweep for both methods at their
/// given step sizes. The threshold is the `reduction`-fold loss decrease.
pub fn ablation_study(
    settings: &StudySettings,
    hiso_eta: f64,
    decomfl_eta: f64,
    rounds: u64,
) -> Result<AblationOutcome, FedError> {
    let task = settings.build_task()?;
    let initial = task.global_loss(&task.initial_point());
    let mut nu_final_losses = Vec::new();
    for &nu in &settings.nu_sweep {
        let mut s = settings.clone();
        s.hessian.nu = nu;
        let trace = Simulation::new(&task, s.config(Method::Hiso, hiso_eta, rounds), CostModel::default())?.run()?;
        nu_final_losses.push((nu, trace.final_loss()));
    }
    let threshold = initial / settings.reduction;
    let tau_rounds = |method: Method, eta: f64| -> Result<Vec<(usize, Option<u64>)>, FedError> {
        settings
            .tau_sweep
            .iter()
            .map(|&tau| {
                let mut s = settings.clone();
                s.tau = tau;
                let trace = run_until(&task, s.config(method, eta, settings.max_rounds), threshold)?;
                Ok((tau, trace.rounds_to_reach(threshold)))
            })
            .collect()
    };
    let hiso_tau_rounds = tau_rounds(Method::Hiso, hiso_eta)?;
    let decomfl_tau_rounds = tau_rounds(Method::Decomfl, decomfl_eta)?;
    let range = |v: &[(usize, Option<u64>)]| {
        relative_range(&v.iter().map(|(_, r)| r.map_or(f64::INFINITY, |r| r as f64)).collect::<Vec<_>>())
    };
    Ok(AblationOutcome {
        rounds,
        nu_relative_range: relative_range(&nu_final_losses.iter().map(|(_, l)| *l).collect::<Vec<_>>()),
        nu_final_losses,
        threshold,
        hiso_tau_range: range(&hiso_tau_rounds),
        decomfl_tau_range: range(&decomfl_tau_rounds),
        hiso_tau_rounds,
        decomfl_tau_rounds,
    })
}
