//! The scalar-only wire: per-round logs of aggregated gradient scalars,
//! client participation tracking, a binary file format and byte metering.

mod format;
mod meter;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::rng::Seed;

pub use format::{deserialize, serialize, MAGIC, VERSION};
pub use meter::{format_bytes, CommMeter, CostModel, RoundTraffic};

pub type ClientId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("round {got} recorded out of order, expected round {expected}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("requested rounds since {requested}, but the ledger only reaches round {current}")]
    Range { requested: u64, current: u64 },
    #[error("round log shape {got_steps}x{got_perturbations} does not match configured {steps}x{perturbations}")]
    Shape {
        steps: usize,
        perturbations: usize,
        got_steps: usize,
        got_perturbations: usize,
    },
    #[error("non-finite scalar {value} at step {step}, perturbation {perturbation}")]
    NonFinite { step: usize, perturbation: usize, value: f64 },
    #[error("malformed ledger at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
}

/// Aggregated gradient scalars of one round, a `steps x perturbations` matrix
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    round: u64,
    steps: usize,
    perturbations: usize,
    scalars: Vec<f64>,
}

impl RoundLog {
    pub fn new(round: u64, steps: usize, perturbations: usize, scalars: Vec<f64>) -> Result<Self, LedgerError> {
        if steps == 0 || perturbations == 0 || scalars.len() != steps * perturbations {
            return Err(LedgerError::Shape {
                steps,
                perturbations,
                got_steps: if perturbations == 0 { 0 } else { scalars.len() / perturbations.max(1) },
                got_perturbations: perturbations,
            });
        }
        if let Some(i) = scalars.iter().position(|v| !v.is_finite()) {
            return Err(LedgerError::NonFinite {
                step: i / perturbations,
                perturbation: i % perturbations,
                value: scalars[i],
            });
        }
        Ok(Self {
            round,
            steps,
            perturbations,
            scalars,
        })
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn perturbations(&self) -> usize {
        self.perturbations
    }

    pub fn scalar(&self, step: usize, perturbation: usize) -> f64 {
        self.scalars[step * self.perturbations + perturbation]
    }

    /// The `perturbations` scalars of local step `step`.
    pub fn step_scalars(&self, step: usize) -> &[f64] {
        &self.scalars[step * self.perturbations..(step + 1) * self.perturbations]
    }

    pub fn scalars(&self) -> &[f64] {
        &self.scalars
    }
}

/// Fixed run parameters stored at the head of a ledger file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerHeader {
    pub dim: u64,
    pub steps: u32,
    pub perturbations: u32,
    pub root_seed: Seed,
}

/// Server-side history of every round plus each client's last participation.
///
/// Rounds are contiguous from zero. A client that never participated is
/// treated as last synchronized at round 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    header: LedgerHeader,
    logs: Vec<RoundLog>,
    last_participation: BTreeMap<ClientId, u64>,
}

impl Ledger {
    pub fn new(header: LedgerHeader) -> Self {
        Self {
            header,
            logs: Vec::new(),
            last_participation: BTreeMap::new(),
        }
    }

    pub fn header(&self) -> &LedgerHeader {
        &self.header
    }

    /// Index of the next round to be recorded.
    pub fn current_round(&self) -> u64 {
        self.logs.len() as u64
    }

    pub fn logs(&self) -> &[RoundLog] {
        &self.logs
    }

    pub fn last_participation(&self) -> &BTreeMap<ClientId, u64> {
        &self.last_participation
    }

    /// Round a client's replica was last synchronized to (0 if never seen).
    pub fn last_round_of(&self, client: ClientId) -> u64 {
        self.last_participation.get(&client).copied().unwrap_or(0)
    }

    pub fn record_round(&mut self, log: RoundLog, participants: &[ClientId]) -> Result<(), LedgerError> {
        let expected = self.current_round();
        if log.round != expected {
            return Err(LedgerError::OutOfOrder {
                expected,
                got: log.round,
            });
        }
        let (steps, perturbations) = (self.header.steps as usize, self.header.perturbations as usize);
        if log.steps != steps || log.perturbations != perturbations {
            return Err(LedgerError::Shape {
                steps,
                perturbations,
                got_steps: log.steps,
                got_perturbations: log.perturbations,
            });
        }
        for &client in participants {
            self.last_participation.insert(client, log.round);
        }
        self.logs.push(log);
        Ok(())
    }

    /// Logs for rounds `[since, current)` in ascending order.
    pub fn fetch_since(&self, since: u64) -> Result<&[RoundLog], LedgerError> {
        let current = self.current_round();
        if since > current {
            return Err(LedgerError::Range {
                requested: since,
                current,
            });
        }
        Ok(&self.logs[since as usize..])
    }

    pub(crate) fn from_parts(
        header: LedgerHeader,
        logs: Vec<RoundLog>,
        last_participation: BTreeMap<ClientId, u64>,
    ) -> Self {
        Self {
            header,
            logs,
            last_participation,
        }
    }
}
