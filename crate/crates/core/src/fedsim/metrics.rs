use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::curvature::{CurvatureDiagnostics, HessianSummary};
use crate::ledger::ClientId;

/// Metrics of one completed round, measured on the server model after the
/// round's update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub participants: Vec<ClientId>,
    pub loss: f64,
    pub suboptimality: Option<f64>,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    pub cumulative_bytes: u64,
    pub per_client_bytes: f64,
    pub hessian: HessianSummary,
    pub diagnostics: Option<CurvatureDiagnostics>,
    /// Loss evaluations by all clients so far.
    pub fn_evals: u64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub initial_loss: f64,
    pub records: Vec<RoundRecord>,
}

pub const CSV_HEADER: &str =
    "round,loss,suboptimality,uplink_bytes,downlink_bytes,cumulative_bytes,per_client_bytes,h_min,h_p50,h_max,kappa,zeta,spectral,fn_evals,wall_time_ms";

impl Trace {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_loss, |r| r.loss)
    }

    /// Number of rounds after which the loss first drops to `threshold`.
    pub fn rounds_to_reach(&self, threshold: f64) -> Option<u64> {
        if self.initial_loss <= threshold {
            return Some(0);
        }
        self.records.iter().position(|r| r.loss <= threshold).map(|i| i as u64 + 1)
    }

    /// One JSON object per round. Without wall time the output is a pure
    /// function of the run configuration.
    pub fn to_jsonl(&self, with_wall_time: bool) -> String {
        let mut out = String::new();
        for record in &self.records {
            let mut value = serde_json::to_value(record).expect("record serializes");
            if !with_wall_time {
                value.as_object_mut().expect("object").remove("wall_time_ms");
            }
            out.push_str(&value.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        for r in &self.records {
            let d = r.diagnostics;
            writeln!(
                out,
                "{},{:e},{},{},{},{},{},{:e},{:e},{:e},{},{},{},{},{:.3}",
                r.round,
                r.loss,
                opt(r.suboptimality),
                r.uplink_bytes,
                r.downlink_bytes,
                r.cumulative_bytes,
                r.per_client_bytes,
                r.hessian.min,
                r.hessian.p50,
                r.hessian.max,
                opt(d.map(|d| d.effective_rank_kappa)),
                opt(d.map(|d| d.whitening_rank_zeta)),
                opt(d.map(|d| d.spectral_term)),
                r.fn_evals,
                r.wall_time_ms
            )
            .expect("write to string");
        }
        out
    }
}
