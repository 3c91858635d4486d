use std::time::Instant;

use crate::curvature::diagnostics;
use crate::ledger::{ClientId, CommMeter, CostModel, Ledger, LedgerHeader, RoundLog};
use crate::rng::{Seed, SeedSchedule};
use crate::tasks::Task;

use super::client::{client_local_update, client_rebuild, ClientState};
use super::metrics::{RoundRecord, Trace};
use super::round::{apply_round, Preconditioner};
use super::{quantize, sample_clients, FedError, RoundConfig};

/// Server-side state: the materialized global model, the global Hessian, the
/// ledger of round scalars and the byte meter.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub model: Vec<f64>,
    pub precond: Preconditioner,
    pub ledger: Ledger,
    pub meter: CommMeter,
}

/// Per-cell mean of the clients' scalar matrices, summed in the given order.
pub fn aggregate_scalars(
    round: u64,
    matrices: &[Vec<f64>],
    steps: usize,
    perturbations: usize,
    quantize_wire: bool,
) -> Result<RoundLog, FedError> {
    let cells = steps * perturbations;
    if matrices.is_empty() || matrices.iter().any(|m| m.len() != cells) {
        return Err(FedError::AggregateShape {
            round,
            expected: matrices.len().max(1),
            steps,
            perturbations,
            got: format!("{:?}", matrices.iter().map(Vec::len).collect::<Vec<_>>()),
        });
    }
    let count = matrices.len() as f64;
    let mut sums = vec![0.0; cells];
    for matrix in matrices {
        for (s, g) in sums.iter_mut().zip(matrix) {
            *s += g;
        }
    }
    let means = sums.into_iter().map(|s| quantize(s / count, quantize_wire)).collect();
    RoundLog::new(round, steps, perturbations, means).map_err(|source| FedError::Ledger { round, source })
}

/// Aggregates one round, advances the global model and Hessian, and appends
/// the round to the ledger.
pub fn server_aggregate(
    server: &mut ServerState,
    matrices: &[Vec<f64>],
    participants: &[ClientId],
    schedule: &SeedSchedule,
    eta: f64,
    quantize_wire: bool,
) -> Result<RoundLog, FedError> {
    let header = *server.ledger.header();
    let round = server.ledger.current_round();
    let log = aggregate_scalars(
        round,
        matrices,
        header.steps as usize,
        header.perturbations as usize,
        quantize_wire,
    )?;
    apply_round(&mut server.model, &mut server.precond, schedule, &log, eta)?;
    server
        .ledger
        .record_round(log.clone(), participants)
        .map_err(|source| FedError::Ledger { round, source })?;
    Ok(log)
}

/// A full scalar-only federation over one task.
#[derive(Debug, Clone)]
pub struct Simulation<'t> {
    task: &'t Task,
    config: RoundConfig,
    schedule: SeedSchedule,
    server: ServerState,
    clients: Vec<ClientState>,
    fn_evals: u64,
    initial_loss: f64,
}

impl<'t> Simulation<'t> {
    pub fn new(task: &'t Task, config: RoundConfig, cost: CostModel) -> Result<Self, FedError> {
        config.validate()?;
        if task.num_clients() != config.total_clients {
            return Err(FedError::Config {
                field: "M",
                reason: format!("task has {} clients, config has {}", task.num_clients(), config.total_clients),
            });
        }
        let dim = task.dim();
        let precond = Preconditioner::initial(config.method, dim, config.hessian)?;
        let x0 = task.initial_point();
        let schedule = SeedSchedule::new(Seed(config.perturbation_seed));
        let header = LedgerHeader {
            dim: dim as u64,
            steps: config.tau as u32,
            perturbations: config.perturbations as u32,
            root_seed: schedule.root(),
        };
        let clients = (0..config.total_clients)
            .map(|i| ClientState::new(i as ClientId, x0.clone(), precond.clone()))
            .collect();
        let initial_loss = task.global_loss(&x0);
        Ok(Self {
            task,
            config,
            schedule,
            server: ServerState {
                model: x0,
                precond,
                ledger: Ledger::new(header),
                meter: CommMeter::new(cost),
            },
            clients,
            fn_evals: 0,
            initial_loss,
        })
    }

    pub fn config(&self) -> &RoundConfig {
        &self.config
    }

    pub fn schedule(&self) -> &SeedSchedule {
        &self.schedule
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn initial_loss(&self) -> f64 {
        self.initial_loss
    }

    pub fn current_round(&self) -> u64 {
        self.server.ledger.current_round()
    }

    /// Runs the next round with uniformly sampled participants.
    pub fn run_round(&mut self) -> Result<RoundRecord, FedError> {
        let round = self.current_round();
        let participants = sample_clients(
            self.config.total_clients,
            self.config.sampled_clients,
            round,
            self.config.sampling_seed,
        )
        .map_err(|e| match e {
            FedError::Config { reason, .. } => FedError::Participants { round, reason },
            other => other,
        })?;
        self.run_round_with(&participants)
    }

    /// Runs the next round with an explicit ascending participant list.
    pub fn run_round_with(&mut self, participants: &[ClientId]) -> Result<RoundRecord, FedError> {
        let started = Instant::now();
        let round = self.current_round();
        if participants.is_empty()
            || participants.windows(2).any(|w| w[0] >= w[1])
            || participants.iter().any(|&c| c as usize >= self.clients.len())
        {
            return Err(FedError::Participants {
                round,
                reason: format!("{participants:?} is not an ascending list of distinct known clients"),
            });
        }
        let mut matrices = Vec::with_capacity(participants.len());
        let mut fetched = Vec::with_capacity(participants.len());
        for &id in participants {
            let since = self.server.ledger.last_round_of(id);
            let missed = self
                .server
                .ledger
                .fetch_since(since)
                .map_err(|source| FedError::Ledger { round, source })?;
            let client = &mut self.clients[id as usize];
            client_rebuild(client, missed, self.config.eta, &self.schedule)?;
            fetched.push(missed.len() as u64);
            let update = client_local_update(client, self.task, round, &self.config, &self.schedule)?;
            self.fn_evals += update.fn_evals;
            matrices.push(update.scalars);
        }
        server_aggregate(
            &mut self.server,
            &matrices,
            participants,
            &self.schedule,
            self.config.eta,
            self.config.quantize_wire,
        )?;
        let traffic = self
            .server
            .meter
            .meter_round(self.config.tau, self.config.perturbations, &fetched);
        let model = &self.server.model;
        let diag = self.server.precond.diag();
        let diagnostics = match self.task.known_curvature() {
            Some((sigma, l)) => {
                Some(diagnostics(&diag, sigma, l).map_err(|source| FedError::Curvature { round, source })?)
            }
            None => None,
        };
        Ok(RoundRecord {
            round,
            participants: participants.to_vec(),
            loss: self.task.global_loss(model),
            suboptimality: self.task.suboptimality(model),
            uplink_bytes: traffic.uplink,
            downlink_bytes: traffic.downlink,
            cumulative_bytes: self.server.meter.total_bytes(),
            per_client_bytes: self.server.meter.per_client_bytes(),
            hessian: crate::curvature::HessianSummary::of(&diag),
            diagnostics,
            fn_evals: self.fn_evals,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs the remaining rounds of the configured budget.
    pub fn run(&mut self) -> Result<Trace, FedError> {
        let mut records = Vec::new();
        while self.current_round() < self.config.rounds {
            records.push(self.run_round()?);
        }
        Ok(Trace {
            initial_loss: self.initial_loss,
            records,
        })
    }
}

/// Runs `config.rounds` rounds of the scalar-only protocol.
pub fn run_training(task: &Task, config: &RoundConfig, cost: CostModel) -> Result<Trace, FedError> {
    Simulation::new(task, config.clone(), cost)?.run()
}
