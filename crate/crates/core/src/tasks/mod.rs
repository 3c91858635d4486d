//! Desk-scale objectives with known ground truth, and non-IID partitioning.
//!
//! The analytic gradients and curvature here are for oracles and diagnostics;
//! the optimizer only ever sees loss values.

mod logistic;
mod partition;
mod quadratic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use logistic::{LogisticSpec, LogisticTask};
pub use partition::{partition_dirichlet, DirichletPartition};
pub use quadratic::{make_lognormal_spectrum, random_orthogonal, QuadraticSpec, QuadraticTask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("invalid task parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("batch position {position} out of range for client {client} with {shard_len} samples")]
    BatchOutOfRange {
        client: usize,
        position: usize,
        shard_len: usize,
    },
    #[error("{samples} samples cannot fill {clients} clients")]
    TooFewSamples { samples: usize, clients: usize },
    #[error("no partition without empty clients after {attempts} draws")]
    PartitionExhausted { attempts: usize },
    #[error("client {client} does not exist ({clients} clients)")]
    UnknownClient { client: usize, clients: usize },
}

/// Which samples of a client's shard a loss evaluation uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Batch {
    Full,
    /// Positions within the client's shard.
    Positions(Vec<usize>),
}

/// Task selection as it appears in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Quadratic(QuadraticSpec),
    Logistic(LogisticSpec),
}

impl TaskSpec {
    pub fn build(&self) -> Result<Task, TaskError> {
        Ok(match self {
            TaskSpec::Quadratic(q) => Task::Quadratic(QuadraticTask::from_spec(q)?),
            TaskSpec::Logistic(l) => Task::Logistic(LogisticTask::from_spec(l)?),
        })
    }

    pub fn clients(&self) -> usize {
        match self {
            TaskSpec::Quadratic(q) => q.clients,
            TaskSpec::Logistic(l) => l.clients,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TaskSpec::Quadratic(q) => q.dim,
            TaskSpec::Logistic(l) => l.dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Quadratic(QuadraticTask),
    Logistic(LogisticTask),
}

impl Task {
    pub fn dim(&self) -> usize {
        match self {
            Task::Quadratic(t) => t.dim(),
            Task::Logistic(t) => t.dim(),
        }
    }

    pub fn num_clients(&self) -> usize {
        match self {
            Task::Quadratic(t) => t.num_clients(),
            Task::Logistic(t) => t.num_clients(),
        }
    }

    fn check(&self, client: usize, x: &[f64]) -> Result<(), TaskError> {
        if client >= self.num_clients() {
            return Err(TaskError::UnknownClient {
                client,
                clients: self.num_clients(),
            });
        }
        if x.len() != self.dim() {
            return Err(TaskError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Loss of client `client` on `batch`. Quadratic tasks are deterministic
    /// and ignore the batch.
    pub fn client_loss(&self, client: usize, x: &[f64], batch: &Batch) -> Result<f64, TaskError> {
        self.check(client, x)?;
        match self {
            Task::Quadratic(t) => Ok(t.client_loss(client, x)),
            Task::Logistic(t) => t.client_loss(client, x, batch),
        }
    }

    pub fn client_grad(&self, client: usize, x: &[f64], batch: &Batch) -> Result<Vec<f64>, TaskError> {
        self.check(client, x)?;
        match self {
            Task::Quadratic(t) => Ok(t.client_grad(client, x)),
            Task::Logistic(t) => t.client_grad(client, x, batch),
        }
    }

    /// Average of the full-data client losses.
    pub fn global_loss(&self, x: &[f64]) -> f64 {
        match self {
            Task::Quadratic(t) => t.global_loss(x),
            Task::Logistic(t) => t.global_loss(x),
        }
    }

    pub fn global_grad(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Task::Quadratic(t) => t.global_grad(x),
            Task::Logistic(t) => t.global_grad(x),
        }
    }

    /// Diagonal of the global Hessian (Gauss-Newton for logistic tasks).
    pub fn hessian_diag(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Task::Quadratic(t) => t.curvature_diag().to_vec(),
            Task::Logistic(t) => t.hessian_diag(x),
        }
    }

    pub fn sample_batch(&self, client: usize, seed: u64) -> Batch {
        match self {
            Task::Quadratic(_) => Batch::Full,
            Task::Logistic(t) => t.sample_batch(client, seed),
        }
    }

    /// Diagonal curvature and its largest entry, for axis-aligned quadratics.
    pub fn known_curvature(&self) -> Option<(&[f64], f64)> {
        match self {
            Task::Quadratic(t) if !t.is_rotated() => Some((t.spectrum(), t.lipschitz())),
            _ => None,
        }
    }

    /// `F(x) - F*` when the optimum is known.
    pub fn suboptimality(&self, x: &[f64]) -> Option<f64> {
        match self {
            Task::Quadratic(t) => Some(t.suboptimality(x)),
            Task::Logistic(_) => None,
        }
    }

    /// Starting point of every run: the origin.
    pub fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}
