use crate::curvature::DiagHessian;
use crate::ledger::ClientId;
use crate::rng::{gaussian_vector, Seed, SeedSchedule};
use crate::tasks::Task;
use crate::zo::{multi_perturbation_delta, rge_scalar, Direction, GradScalar};

use super::{batch_seed, FedError, Method, RoundConfig};

/// How the dense reference aggregates client contributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// Average the per-cell scalars, then expand against the shared
    /// directions: the same reduction order as the scalar protocol.
    FixedOrder,
    /// Each client uploads its dense per-step delta and the server averages
    /// the vectors elementwise.
    Dense,
}

/// Global model and Hessian diagonal after every round.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTrace {
    pub models: Vec<Vec<f64>>,
    pub hessians: Vec<Vec<f64>>,
    pub losses: Vec<f64>,
}

/// Reference run in which every sampled client downloads the dense global
/// model and Hessian, so there is no ledger, no replay and no client state
/// between rounds.
pub fn vector_oracle_run(
    task: &Task,
    config: &RoundConfig,
    participation: &[Vec<ClientId>],
    mode: OracleMode,
) -> Result<OracleTrace, FedError> {
    config.validate()?;
    let dim = task.dim();
    let schedule = SeedSchedule::new(Seed(config.perturbation_seed));
    let mut x = task.initial_point();
    let mut h = match config.method {
        Method::Hiso => Some(
            DiagHessian::identity(dim, config.hessian).map_err(|source| FedError::Curvature { round: 0, source })?,
        ),
        Method::Decomfl => None,
    };
    let (steps, pert) = (config.tau, config.perturbations);
    let mut trace = OracleTrace {
        models: Vec::with_capacity(participation.len()),
        hessians: Vec::with_capacity(participation.len()),
        losses: Vec::with_capacity(participation.len()),
    };
    for (round, clients) in participation.iter().enumerate() {
        let round = round as u64;
        let zo_err = |source| FedError::Zo { round, source };
        if clients.is_empty() {
            return Err(FedError::Participants {
                round,
                reason: "no participants".into(),
            });
        }
        let mut z = Vec::with_capacity(steps * pert);
        for k in 0..steps {
            for p in 0..pert {
                let mut u = gaussian_vector(schedule.derive(round, k as u64, p as u64), dim)
                    .map_err(|e| FedError::Participants {
                        round,
                        reason: e.to_string(),
                    })?;
                if let Some(h) = &h {
                    for (ui, hi) in u.iter_mut().zip(h.diag()) {
                        *ui /= hi.sqrt();
                    }
                }
                z.push(Direction::new(u));
            }
        }

        let mut uploads_scalar: Vec<Vec<GradScalar>> = Vec::new();
        let mut uploads_dense: Vec<Vec<Vec<f64>>> = Vec::new();
        for &id in clients {
            let cid = id as usize;
            let mut local = x.clone();
            let mut scalars = Vec::with_capacity(steps * pert);
            let mut deltas = Vec::with_capacity(steps);
            for k in 0..steps {
                let batch = task.sample_batch(cid, batch_seed(config.batch_seed, id, round, k));
                let mut step = Vec::with_capacity(pert);
                for p in 0..pert {
                    let loss = |y: &[f64]| task.client_loss(cid, y, &batch).unwrap_or(f64::NAN);
                    let g = rge_scalar(loss, &local, &z[k * pert + p], config.mu).map_err(|source| {
                        FedError::Estimator {
                            round,
                            client: id,
                            step: k,
                            perturbation: p,
                            source,
                        }
                    })?;
                    step.push(g);
                }
                let delta = multi_perturbation_delta(&step, &z[k * pert..(k + 1) * pert]).map_err(zo_err)?;
                for (xi, di) in local.iter_mut().zip(&delta) {
                    *xi -= config.eta * di;
                }
                scalars.extend(step);
                deltas.push(delta);
            }
            uploads_scalar.push(scalars);
            uploads_dense.push(deltas);
        }

        let count = clients.len() as f64;
        for k in 0..steps {
            let global = match mode {
                OracleMode::FixedOrder => {
                    let mut means = Vec::with_capacity(pert);
                    for p in 0..pert {
                        let mut s = 0.0;
                        for upload in &uploads_scalar {
                            s += upload[k * pert + p].value();
                        }
                        means.push(GradScalar::new(s / count).map_err(zo_err)?);
                    }
                    multi_perturbation_delta(&means, &z[k * pert..(k + 1) * pert]).map_err(zo_err)?
                }
                OracleMode::Dense => {
                    let mut sum = vec![0.0; dim];
                    for upload in &uploads_dense {
                        for (s, d) in sum.iter_mut().zip(&upload[k]) {
                            *s += d;
                        }
                    }
                    sum.into_iter().map(|s| s / count).collect()
                }
            };
            for (xi, gi) in x.iter_mut().zip(&global) {
                *xi -= config.eta * gi;
            }
            if let Some(cur) = h.take() {
                h = Some(
                    cur.ema_update(&global)
                        .map_err(|source| FedError::Curvature { round, source })?,
                );
            }
        }
        trace.losses.push(task.global_loss(&x));
        trace.hessians.push(h.as_ref().map_or_else(|| vec![1.0; dim], |h| h.diag().to_vec()));
        trace.models.push(x.clone());
    }
    Ok(trace)
}
