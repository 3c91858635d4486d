use crate::ledger::{ClientId, RoundLog};
use crate::rng::SeedSchedule;
use crate::tasks::{Task, TaskError};
use crate::zo::{multi_perturbation_delta, rge_scalar, ZoError};

use super::round::{apply_round, round_directions, Preconditioner};
use super::{batch_seed, quantize, FedError, RoundConfig};

/// A client's replica of the global state.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: ClientId,
    pub model: Vec<f64>,
    pub precond: Preconditioner,
    /// Round the replica is synchronized to.
    pub last_round: u64,
    /// Loss evaluations spent so far, local updates only.
    pub fn_evals: u64,
}

impl ClientState {
    pub fn new(id: ClientId, model: Vec<f64>, precond: Preconditioner) -> Self {
        Self {
            id,
            model,
            precond,
            last_round: 0,
            fn_evals: 0,
        }
    }
}

/// Replays the missed rounds `[client.last_round, r)` from their global
/// scalars, bringing the model and Hessian replica to the server's round-`r`
/// values.
pub fn client_rebuild(
    client: &mut ClientState,
    missed: &[RoundLog],
    eta: f64,
    schedule: &SeedSchedule,
) -> Result<(), FedError> {
    for (i, log) in missed.iter().enumerate() {
        let expected = client.last_round + i as u64;
        if log.round() != expected {
            return Err(FedError::Participants {
                round: log.round(),
                reason: format!("client {} replay expected round {expected}, found {}", client.id, log.round()),
            });
        }
    }
    for log in missed {
        apply_round(&mut client.model, &mut client.precond, schedule, log, eta)?;
        client.last_round = log.round() + 1;
    }
    Ok(())
}

/// Scalars a client uploads for one round, plus the evaluations it spent.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    /// `tau x P`, row-major.
    pub scalars: Vec<f64>,
    pub fn_evals: u64,
}

/// Runs `tau` local steps with the round's shared directions and the client's
/// own scalars, then resets the model to its round-start value.
pub fn client_local_update(
    client: &mut ClientState,
    task: &Task,
    round: u64,
    config: &RoundConfig,
    schedule: &SeedSchedule,
) -> Result<LocalUpdate, FedError> {
    if client.last_round != round {
        return Err(FedError::Participants {
            round,
            reason: format!("client {} is synchronized to round {}", client.id, client.last_round),
        });
    }
    let (steps, perturbations) = (config.tau, config.perturbations);
    let directions = round_directions(schedule, &client.precond, round, steps, perturbations)?;
    let start = client.model.clone();
    let cid = client.id as usize;
    let mut scalars = Vec::with_capacity(steps * perturbations);
    let mut evals = 0u64;
    for k in 0..steps {
        let batch = task.sample_batch(cid, batch_seed(config.batch_seed, client.id, round, k));
        let mut step = Vec::with_capacity(perturbations);
        for p in 0..perturbations {
            let mut failure: Option<TaskError> = None;
            let loss = |y: &[f64]| match task.client_loss(cid, y, &batch) {
                Ok(v) => v,
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            };
            let g = rge_scalar(loss, &client.model, &directions[k * perturbations + p], config.mu);
            evals += 2;
            if let Some(source) = failure {
                client.model = start;
                return Err(FedError::Task { round, source });
            }
            let g = match g {
                Ok(g) => g,
                Err(source) => {
                    client.model = start;
                    return Err(estimator_error(round, client.id, k, p, source));
                }
            };
            step.push(g);
        }
        let delta = multi_perturbation_delta(&step, &directions[k * perturbations..(k + 1) * perturbations])
            .map_err(|source| FedError::Zo { round, source })?;
        for (x, d) in client.model.iter_mut().zip(&delta) {
            *x -= config.eta * d;
        }
        scalars.extend(step.iter().map(|g| quantize(g.value(), config.quantize_wire)));
    }
    client.model = start;
    client.fn_evals += evals;
    Ok(LocalUpdate {
        scalars,
        fn_evals: evals,
    })
}

fn estimator_error(round: u64, client: ClientId, step: usize, perturbation: usize, source: ZoError) -> FedError {
    FedError::Estimator {
        round,
        client,
        step,
        perturbation,
        source,
    }
}
