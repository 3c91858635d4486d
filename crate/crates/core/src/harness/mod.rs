//! Run specifications, experiment execution, verification suites, byte
//! accounting and parameter sweeps behind the command-line tool.

mod account;
mod report;
mod studies;
mod sweep;
mod verify;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fedsim::{sampling_plan, FedError, OracleMode, RoundConfig, Simulation, Trace};
use crate::ledger::{serialize, CostModel};
use crate::tasks::TaskSpec;

pub use account::{account, render_table, AccountRow, AccountSpec};
pub use report::{Check, VerificationReport};
pub use studies::{
    acceleration_study, ablation_study, AblationOutcome, AccelerationOutcome, StudySettings,
};
pub use sweep::{sweep, SweepGrid, SweepRow, SweepSpec, SWEEP_HEADER};
pub use verify::{
    compare_with_oracle, equivalence_check, fourth_moment_monte_carlo, fuzz_config, max_abs_gap,
    max_relative_error, multi_perturbation_variances, preconditioned_mean_check, random_lemma_pair,
    verify_diagnostics_ordering, verify_equivalence, verify_fourth_moment, verify_lemmas,
    verify_unbiasedness, verify_variance_law, Divergence,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid spec field `{field}`: {reason}")]
    Spec { field: &'static str, reason: String },
    #[error("cannot parse spec: {0}")]
    Parse(String),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error(transparent)]
    Run(#[from] FedError),
}

impl HarnessError {
    /// 2 for anything wrong with the input, 3 for failures during execution.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Spec { .. } | HarnessError::Parse(_) => 2,
            HarnessError::Run(FedError::Config { .. }) => 2,
            HarnessError::Io { .. } | HarnessError::Run(_) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    /// Also write the binary ledger.
    pub ledger: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyToggles {
    /// Rerun the spec through the dense reference and record the gap.
    pub equivalence: bool,
}

/// A complete, declarative run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub task: TaskSpec,
    #[serde(default)]
    pub round: RoundConfig,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub verify: VerifyToggles,
}

impl RunSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: RunSpec = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.task.dim() == 0 {
            return Err(HarnessError::Spec {
                field: "task.dim",
                reason: "must be at least 1".into(),
            });
        }
        self.round.validate_grid()?;
        if self.task.clients() != self.round.total_clients {
            return Err(HarnessError::Spec {
                field: "task.clients",
                reason: format!("task has {} clients but M = {}", self.task.clients(), self.round.total_clients),
            });
        }
        Ok(())
    }
}

/// What `cmd_run` produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trace: Trace,
    pub files: Vec<PathBuf>,
    pub oracle_gap: Option<f64>,
}

fn write(path: PathBuf, bytes: &[u8], files: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    fs::write(&path, bytes).map_err(|e| HarnessError::Io {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    files.push(path);
    Ok(())
}

/// Executes a spec and writes `metrics.jsonl`, `summary.csv` and optionally
/// `ledger.bin` and `equivalence.json` under `out_dir`.
pub fn cmd_run(spec: &RunSpec, out_dir: &Path) -> Result<RunOutcome, HarnessError> {
    spec.validate()?;
    let task = spec.task.build().map_err(|e| HarnessError::Spec {
        field: "task",
        reason: e.to_string(),
    })?;
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::Io {
        path: out_dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut sim = Simulation::new(&task, spec.round.clone(), spec.cost)?;
    let trace = sim.run()?;
    let mut files = Vec::new();
    write(out_dir.join("metrics.jsonl"), trace.to_jsonl(true).as_bytes(), &mut files)?;
    write(out_dir.join("summary.csv"), trace.to_csv().as_bytes(), &mut files)?;
    if spec.output.ledger {
        write(out_dir.join("ledger.bin"), &serialize(&sim.server().ledger), &mut files)?;
    }
    let mut oracle_gap = None;
    if spec.verify.equivalence {
        sampling_plan(&spec.round)?;
        let div = compare_with_oracle(&task, &spec.round, OracleMode::FixedOrder)?;
        let json = serde_json::json!({
            "max_abs_model_gap": div.max_abs,
            "max_abs_hessian_gap": div.hessian_max_abs,
            "first_divergent_round": div.first_round,
        });
        write(out_dir.join("equivalence.json"), json.to_string().as_bytes(), &mut files)?;
        oracle_gap = Some(div.max_abs.max(div.hessian_max_abs));
    }
    Ok(RunOutcome {
        trace,
        files,
        oracle_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[task]
kind = "quadratic"
dim = 10
clients = 4

[round]
M = 4
m = 2
R = 5
eta = 0.01
"#;

    #[test]
    fn minimal_spec_parses() {
        let spec = RunSpec::from_toml(MINIMAL).unwrap();
        assert_eq!(spec.round.rounds, 5);
        assert_eq!(spec.task.dim(), 10);
    }

    #[test]
    fn m_above_total_names_m() {
        let err = RunSpec::from_toml(&MINIMAL.replace("m = 2", "m = 7")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("`m`"), "{err}");
    }

    #[test]
    fn zero_dimension_rejected() {
        let err = RunSpec::from_toml(&MINIMAL.replace("dim = 10", "dim = 0")).unwrap_err();
        assert!(err.to_string().contains("task.dim"), "{err}");
    }

    #[test]
    fn client_count_must_agree() {
        let err = RunSpec::from_toml(&MINIMAL.replace("clients = 4", "clients = 3")).unwrap_err();
        assert!(err.to_string().contains("task.clients"), "{err}");
    }

    #[test]
    fn unknown_field_is_a_parse_error() {
        let err = RunSpec::from_toml(&format!("{MINIMAL}\nbogus = 1\n")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
