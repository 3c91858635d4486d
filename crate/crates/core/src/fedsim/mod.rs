//! Round orchestration of the scalar-only protocol: client sampling, replay of
//! missed rounds, local updates with model reset, scalar aggregation, and a
//! dense-vector reference implementation to check it against.

mod client;
mod metrics;
mod oracle;
mod round;
mod server;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curvature::{CurvatureError, HessianConfig};
use crate::ledger::{ClientId, LedgerError};
use crate::rng::{mix64, RngError, MAX_PERTURBATIONS, MAX_ROUNDS, MAX_STEPS};
use crate::tasks::TaskError;
use crate::zo::{SmoothingParams, ZoError};

pub use client::{client_local_update, client_rebuild, ClientState, LocalUpdate};
pub use metrics::{RoundRecord, Trace};
pub use oracle::{vector_oracle_run, OracleMode, OracleTrace};
pub use round::{apply_round, round_directions, Preconditioner};
pub use server::{aggregate_scalars, run_training, server_aggregate, ServerState, Simulation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("round {round}: client {client} step {step} perturbation {perturbation}: {source}")]
    Estimator {
        round: u64,
        client: ClientId,
        step: usize,
        perturbation: usize,
        source: ZoError,
    },
    #[error("round {round}: {source}")]
    Task { round: u64, source: TaskError },
    #[error("round {round}: {source}")]
    Ledger { round: u64, source: LedgerError },
    #[error("round {round}: {source}")]
    Curvature { round: u64, source: CurvatureError },
    #[error("round {round}: {source}")]
    Zo { round: u64, source: ZoError },
    #[error("round {round}: expected {expected} scalar matrices of {steps}x{perturbations}, got {got}")]
    AggregateShape {
        round: u64,
        expected: usize,
        steps: usize,
        perturbations: usize,
        got: String,
    },
    #[error("round {round}: participant list is invalid: {reason}")]
    Participants { round: u64, reason: String },
}

impl FedError {
    /// Round at which the run failed, if the failure happened inside a round.
    pub fn round(&self) -> Option<u64> {
        match self {
            FedError::Config { .. } => None,
            FedError::Estimator { round, .. }
            | FedError::Task { round, .. }
            | FedError::Ledger { round, .. }
            | FedError::Curvature { round, .. }
            | FedError::Zo { round, .. }
            | FedError::AggregateShape { round, .. }
            | FedError::Participants { round, .. } => Some(*round),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Learned diagonal Hessian shapes the perturbations.
    #[default]
    Hiso,
    /// Plain Gaussian perturbations; no curvature state at all.
    Decomfl,
}

/// Everything that defines a training run apart from the task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundConfig {
    #[serde(rename = "M")]
    pub total_clients: usize,
    #[serde(rename = "m")]
    pub sampled_clients: usize,
    pub tau: usize,
    #[serde(rename = "P")]
    pub perturbations: usize,
    pub eta: f64,
    pub mu: SmoothingParams,
    pub hessian: HessianConfig,
    #[serde(rename = "R")]
    pub rounds: u64,
    pub method: Method,
    pub sampling_seed: u64,
    pub perturbation_seed: u64,
    pub batch_seed: u64,
    /// Round scalars to 32-bit floats on the wire, both directions.
    pub quantize_wire: bool,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            total_clients: 8,
            sampled_clients: 4,
            tau: 1,
            perturbations: 5,
            eta: 1e-3,
            mu: SmoothingParams::default(),
            hessian: HessianConfig::default(),
            rounds: 100,
            method: Method::Hiso,
            sampling_seed: 0,
            perturbation_seed: 1,
            batch_seed: 2,
            quantize_wire: false,
        }
    }
}

fn bad(field: &'static str, reason: impl Into<String>) -> FedError {
    FedError::Config {
        field,
        reason: reason.into(),
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        if self.total_clients == 0 || self.total_clients > u32::MAX as usize {
            return Err(bad("M", format!("must be between 1 and {}, got {}", u32::MAX, self.total_clients)));
        }
        if self.sampled_clients == 0 || self.sampled_clients > self.total_clients {
            return Err(bad(
                "m",
                format!("must satisfy 1 <= m <= M = {}, got {}", self.total_clients, self.sampled_clients),
            ));
        }
        if self.tau == 0 || self.tau as u64 > MAX_STEPS {
            return Err(bad("tau", format!("must be between 1 and {MAX_STEPS}, got {}", self.tau)));
        }
        if self.perturbations == 0 || self.perturbations as u64 > MAX_PERTURBATIONS {
            return Err(bad(
                "P",
                format!("must be between 1 and {MAX_PERTURBATIONS}, got {}", self.perturbations),
            ));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(bad("eta", format!("must be finite and nonnegative, got {}", self.eta)));
        }
        if self.rounds > MAX_ROUNDS {
            return Err(bad("R", format!("must be at most {MAX_ROUNDS}, got {}", self.rounds)));
        }
        if let Err(e) = self.hessian.validate() {
            let field = match e {
                CurvatureError::InvalidNu(_) => "hessian.nu",
                CurvatureError::InvalidEpsilon(_) => "hessian.epsilon",
                _ => "hessian.beta_lower",
            };
            return Err(bad(field, e.to_string()));
        }
        Ok(())
    }

    /// Validation plus a collision check of every perturbation seed in the run.
    pub fn validate_grid(&self) -> Result<(), FedError> {
        self.validate()?;
        let schedule = crate::rng::SeedSchedule::new(crate::rng::Seed(self.perturbation_seed));
        schedule
            .check_grid(self.rounds, self.tau as u64, self.perturbations as u64)
            .map_err(|e: RngError| bad("perturbation_seed", e.to_string()))
    }
}

/// `m` distinct client ids out of `M`, uniform without replacement, in
/// ascending order. Independent of the perturbation seeds.
pub fn sample_clients(total: usize, sampled: usize, round: u64, seed: u64) -> Result<Vec<ClientId>, FedError> {
    if sampled == 0 || sampled > total {
        return Err(bad("m", format!("must satisfy 1 <= m <= M = {total}, got {sampled}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(mix64(seed) ^ round));
    let mut ids: Vec<ClientId> = rand::seq::index::sample(&mut rng, total, sampled)
        .into_iter()
        .map(|i| i as ClientId)
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Participants of every round of a run.
pub fn sampling_plan(config: &RoundConfig) -> Result<Vec<Vec<ClientId>>, FedError> {
    (0..config.rounds)
        .map(|r| sample_clients(config.total_clients, config.sampled_clients, r, config.sampling_seed))
        .collect()
}

/// Seed of the mini-batch a client draws at `(round, step)`.
pub fn batch_seed(root: u64, client: ClientId, round: u64, step: usize) -> u64 {
    mix64(mix64(mix64(root) ^ client as u64) ^ ((round << 16) | step as u64))
}

pub(crate) fn quantize(v: f64, enabled: bool) -> f64 {
    if enabled {
        v as f32 as f64
    } else {
        v
    }
}
