use serde::{Deserialize, Serialize};

use crate::ledger::{format_bytes, CommMeter, CostModel};

use super::HarnessError;

/// Inputs of a communication-cost table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccountSpec {
    /// One table row per entry.
    pub rounds: Vec<u64>,
    #[serde(rename = "m")]
    pub sampled_clients: u64,
    pub tau: u64,
    #[serde(rename = "P")]
    pub perturbations: u64,
    /// Model dimension used for the dense comparison.
    pub dim: u64,
    pub cost: CostModel,
}

impl Default for AccountSpec {
    fn default() -> Self {
        Self {
            rounds: vec![550, 275],
            sampled_clients: 2,
            tau: 1,
            perturbations: 5,
            dim: 1_300_000_000,
            cost: CostModel::default(),
        }
    }
}

impl AccountSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let spec = |field: &'static str, reason: &str| HarnessError::Spec {
            field,
            reason: reason.into(),
        };
        if self.dim == 0 {
            return Err(spec("dim", "must be at least 1"));
        }
        if self.sampled_clients == 0 {
            return Err(spec("m", "must be at least 1"));
        }
        if self.tau == 0 {
            return Err(spec("tau", "must be at least 1"));
        }
        if self.perturbations == 0 {
            return Err(spec("P", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountRow {
    pub rounds: u64,
    /// Bytes sent plus received by one participating client over all rounds,
    /// every client current with the server.
    pub scalar_bytes_per_client: f64,
    /// All clients, both directions.
    pub scalar_bytes_total: u64,
    /// One dense model-sized message.
    pub dense_message_bytes: u64,
    /// Dense upload and download for one client in one round.
    pub dense_round_bytes: u64,
    /// `dense_message_bytes` over one client's scalar traffic in one round.
    pub dense_to_scalar_ratio: f64,
}

/// Meters `rounds` rounds in which every sampled client fetches exactly one
/// round log, and sets the dense protocol beside it.
pub fn account(spec: &AccountSpec) -> Result<Vec<AccountRow>, HarnessError> {
    spec.validate()?;
    let fetched = vec![1u64; spec.sampled_clients as usize];
    let dense_message = spec.dim * spec.cost.bytes_per_scalar;
    Ok(spec
        .rounds
        .iter()
        .map(|&rounds| {
            let mut meter = CommMeter::new(spec.cost);
            let mut one_round = 0.0;
            for r in 0..rounds {
                meter.meter_round(spec.tau as usize, spec.perturbations as usize, &fetched);
                if r == 0 {
                    one_round = meter.per_client_bytes();
                }
            }
            if rounds == 0 {
                let mut probe = CommMeter::new(spec.cost);
                probe.meter_round(spec.tau as usize, spec.perturbations as usize, &fetched);
                one_round = probe.per_client_bytes();
            }
            AccountRow {
                rounds,
                scalar_bytes_per_client: meter.per_client_bytes(),
                scalar_bytes_total: meter.total_bytes(),
                dense_message_bytes: dense_message,
                dense_round_bytes: 2 * dense_message,
                dense_to_scalar_ratio: dense_message as f64 / one_round,
            }
        })
        .collect())
}

pub fn render_table(rows: &[AccountRow]) -> String {
    let mut out = String::from("rounds | scalar per client | scalar all clients | dense message | dense round | ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{} | {} | {} | {} | {} | {:.4e}\n",
            r.rounds,
            format_bytes(r.scalar_bytes_per_client),
            format_bytes(r.scalar_bytes_total as f64),
            format_bytes(r.dense_message_bytes as f64),
            format_bytes(r.dense_round_bytes as f64),
            r.dense_to_scalar_ratio
        ));
    }
    out
}
