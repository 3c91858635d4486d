use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hiso::harness::{
    account, cmd_run, render_table, sweep, verify_equivalence, verify_lemmas, AccountSpec, HarnessError, RunSpec,
    SweepSpec, VerificationReport,
};
use hiso::ledger::CostModel;

/// Federated zeroth-order training with scalar-only communication.
#[derive(Parser)]
#[command(name = "hiso", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML run spec and write metrics.
    Run {
        spec: PathBuf,
        /// Output directory; defaults to `output.dir` in the spec.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo checks of the Gaussian moment identities.
    VerifyLemmas {
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scalar protocol against the dense reference on fuzzed configurations.
    VerifyEquivalence {
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Byte cost table of the scalar and dense protocols.
    Account {
        /// TOML account spec; flags are ignored when given.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![550u64, 275])]
        rounds: Vec<u64>,
        #[arg(short = 'm', long, default_value_t = 2)]
        sampled: u64,
        #[arg(long, default_value_t = 1)]
        tau: u64,
        #[arg(short = 'P', long, default_value_t = 5)]
        perturbations: u64,
        #[arg(long, default_value_t = 1_300_000_000)]
        dim: u64,
        #[arg(long, default_value_t = 4)]
        bytes_per_scalar: u64,
        #[arg(long, default_value_t = 0)]
        bytes_per_seed: u64,
    },
    /// Cross-product sweep from a TOML sweep spec; writes `sweep.csv`.
    Sweep {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| HarnessError::Io {
            path: parent.to_path_buf(),
            reason: e.to_string(),
        })?;
    }
    fs::write(path, text).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn finish_report(report: VerificationReport, out: Option<PathBuf>) -> Result<ExitCode, HarnessError> {
    println!("{}", report.summary());
    if let Some(dir) = out {
        write(&dir.join("report.json"), &report.to_json())?;
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn execute(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Run { spec, out } => {
            let spec = RunSpec::from_toml(&read(&spec)?)?;
            let dir = out.or_else(|| spec.output.dir.clone()).ok_or(HarnessError::Spec {
                field: "output.dir",
                reason: "no output directory in the spec or on the command line".into(),
            })?;
            let outcome = cmd_run(&spec, &dir)?;
            println!(
                "{} rounds, final loss {:e}",
                outcome.trace.records.len(),
                outcome.trace.final_loss()
            );
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyLemmas { samples, seed, out } => finish_report(verify_lemmas(samples, seed), out),
        Command::VerifyEquivalence { count, seed, out } => finish_report(verify_equivalence(count, seed), out),
        Command::Account {
            spec,
            rounds,
            sampled,
            tau,
            perturbations,
            dim,
            bytes_per_scalar,
            bytes_per_seed,
        } => {
            let spec = match spec {
                Some(path) => toml::from_str(&read(&path)?).map_err(|e| HarnessError::Parse(e.to_string()))?,
                None => AccountSpec {
                    rounds,
                    sampled_clients: sampled,
                    tau,
                    perturbations,
                    dim,
                    cost: CostModel {
                        bytes_per_scalar,
                        bytes_per_seed,
                    },
                },
            };
            print!("{}", render_table(&account(&spec)?));
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { spec, out } => {
            let spec = SweepSpec::from_toml(&read(&spec)?)?;
            let (rows, csv) = sweep(&spec)?;
            write(&out.join("sweep.csv"), &csv)?;
            println!("{} runs, wrote {}", rows.len(), out.join("sweep.csv").display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
