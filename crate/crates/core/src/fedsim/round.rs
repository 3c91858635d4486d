use crate::curvature::{DiagHessian, HessianConfig};
use crate::ledger::RoundLog;
use crate::rng::{fill_gaussian, SeedSchedule};
use crate::zo::{hessian_informed_direction, multi_perturbation_delta, Direction, GradScalar, ZoError};

use super::{FedError, Method};

/// Shape of the perturbations: plain Gaussian, or scaled by a learned
/// diagonal Hessian that is advanced with every global step.
#[derive(Debug, Clone, PartialEq)]
pub enum Preconditioner {
    Identity { dim: usize },
    Learned(DiagHessian),
}

impl Preconditioner {
    pub fn initial(method: Method, dim: usize, config: HessianConfig) -> Result<Self, FedError> {
        match method {
            Method::Decomfl => Ok(Preconditioner::Identity { dim }),
            Method::Hiso => DiagHessian::identity(dim, config)
                .map(Preconditioner::Learned)
                .map_err(|source| FedError::Curvature { round: 0, source }),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Preconditioner::Identity { dim } => *dim,
            Preconditioner::Learned(h) => h.dim(),
        }
    }

    /// Diagonal of the current estimate (all ones for the identity).
    pub fn diag(&self) -> Vec<f64> {
        match self {
            Preconditioner::Identity { dim } => vec![1.0; *dim],
            Preconditioner::Learned(h) => h.diag().to_vec(),
        }
    }

    pub fn hessian(&self) -> Option<&DiagHessian> {
        match self {
            Preconditioner::Identity { .. } => None,
            Preconditioner::Learned(h) => Some(h),
        }
    }
}

/// Directions `z_{r,k,p}` of one round, row-major over `(k, p)`. Every party
/// regenerates them from the schedule and its copy of the round-start
/// preconditioner.
pub fn round_directions(
    schedule: &SeedSchedule,
    precond: &Preconditioner,
    round: u64,
    steps: usize,
    perturbations: usize,
) -> Result<Vec<Direction>, FedError> {
    let dim = precond.dim();
    let mut out = Vec::with_capacity(steps * perturbations);
    for k in 0..steps {
        for p in 0..perturbations {
            let mut u = vec![0.0; dim];
            fill_gaussian(schedule.derive(round, k as u64, p as u64), &mut u);
            let z = match precond {
                Preconditioner::Identity { .. } => Direction::new(u),
                Preconditioner::Learned(h) => {
                    hessian_informed_direction(h.diag(), u).map_err(|source| FedError::Zo { round, source })?
                }
            };
            out.push(z);
        }
    }
    Ok(out)
}

/// `x <- x - eta * Delta_k` for each step of a logged round, in step order,
/// followed by one EMA update of the Hessian per step with that step's global
/// delta. Server and replaying clients share this routine.
pub fn apply_round(
    model: &mut [f64],
    precond: &mut Preconditioner,
    schedule: &SeedSchedule,
    log: &RoundLog,
    eta: f64,
) -> Result<(), FedError> {
    let round = log.round();
    let (steps, perturbations) = (log.steps(), log.perturbations());
    let directions = round_directions(schedule, precond, round, steps, perturbations)?;
    let mut next = precond.hessian().cloned();
    for k in 0..steps {
        let scalars = log
            .step_scalars(k)
            .iter()
            .map(|&g| GradScalar::new(g))
            .collect::<Result<Vec<_>, ZoError>>()
            .map_err(|source| FedError::Zo { round, source })?;
        let delta = multi_perturbation_delta(&scalars, &directions[k * perturbations..(k + 1) * perturbations])
            .map_err(|source| FedError::Zo { round, source })?;
        for (x, d) in model.iter_mut().zip(&delta) {
            *x -= eta * d;
        }
        if let Some(h) = next.as_mut() {
            h.ema_update_in_place(&delta)
                .map_err(|source| FedError::Curvature { round, source })?;
        }
    }
    if let Some(h) = next {
        *precond = Preconditioner::Learned(h);
    }
    Ok(())
}
