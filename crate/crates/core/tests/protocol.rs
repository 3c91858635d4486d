use hiso::curvature::{DiagHessian, HessianConfig};
use hiso::fedsim::{
    aggregate_scalars, apply_round, client_local_update, client_rebuild, round_directions, sampling_plan,
    vector_oracle_run, ClientState, Method, OracleMode, Preconditioner, RoundConfig, Simulation,
};
use hiso::harness::{compare_with_oracle, max_abs_gap};
use hiso::ledger::{deserialize, serialize, ClientId, CostModel, RoundLog};
use hiso::rng::{mix64, Seed, SeedSchedule};
use hiso::tasks::{LogisticSpec, QuadraticSpec, QuadraticTask, Task, TaskSpec};
use hiso::zo::SmoothingParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quadratic(dim: usize, clients: usize, heterogeneity: f64, seed: u64) -> Task {
    TaskSpec::Quadratic(QuadraticSpec {
        dim,
        variance: 1.0,
        clients,
        heterogeneity,
        rotate: false,
        seed,
    })
    .build()
    .unwrap()
}

fn logistic(dim: usize, clients: usize, seed: u64) -> Task {
    TaskSpec::Logistic(LogisticSpec {
        samples: 60 * clients,
        dim,
        clients,
        batch_size: 8,
        seed,
        ..LogisticSpec::default()
    })
    .build()
    .unwrap()
}

fn config(clients: usize, sampled: usize, tau: usize, p: usize, rounds: u64) -> RoundConfig {
    RoundConfig {
        total_clients: clients,
        sampled_clients: sampled,
        tau,
        perturbations: p,
        eta: 5e-3,
        rounds,
        hessian: HessianConfig {
            nu: 0.1,
            ..HessianConfig::default()
        },
        ..RoundConfig::default()
    }
}

#[test]
fn rebuild_closure_against_always_present_shadow() {
    for schedule in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(schedule));
        let task = if schedule % 2 == 0 { quadratic(24, 3, 0.5, schedule) } else { logistic(12, 3, schedule) };
        let absence = rng.random_range(1..=20u64);
        let leave = rng.random_range(0..5u64);
        let back = leave + 1 + absence;
        let mut sim = Simulation::new(&task, config(3, 2, 2, 3, back + 1), CostModel::default()).unwrap();
        for r in 0..=back {
            let absent = r > leave && r < back;
            let participants: Vec<ClientId> = if absent { vec![0, 2] } else { vec![0, 1] };
            let server_before = sim.server().model.clone();
            let h_before = sim.server().precond.clone();
            sim.run_round_with(&participants).unwrap();
            if r == back {
                let shadow = &sim.clients()[0];
                let returning = &sim.clients()[1];
                assert_eq!(returning.last_round, back);
                assert_eq!(returning.model, shadow.model, "schedule {schedule}");
                assert_eq!(returning.model, server_before);
                assert_eq!(returning.precond, shadow.precond);
                assert_eq!(returning.precond, h_before);
            }
        }
    }
}

#[test]
fn empty_replay_leaves_state_unchanged() {
    let dim = 6;
    let precond = Preconditioner::initial(Method::Hiso, dim, HessianConfig::default()).unwrap();
    let mut client = ClientState::new(0, vec![0.5; dim], precond);
    let before = client.clone();
    client_rebuild(&mut client, &[], 0.1, &SeedSchedule::new(Seed(1))).unwrap();
    assert_eq!(client, before);
}

#[test]
fn replay_with_a_gap_is_rejected() {
    let dim = 4;
    let precond = Preconditioner::initial(Method::Hiso, dim, HessianConfig::default()).unwrap();
    let mut client = ClientState::new(0, vec![0.0; dim], precond);
    let logs = [RoundLog::new(0, 1, 1, vec![1.0]).unwrap(), RoundLog::new(2, 1, 1, vec![1.0]).unwrap()];
    assert!(client_rebuild(&mut client, &logs, 0.1, &SeedSchedule::new(Seed(1))).is_err());
}

#[test]
fn zero_scalars_keep_model_and_contract_curvature() {
    let dim = 5;
    let cfg = HessianConfig {
        nu: 0.2,
        epsilon: 1e-3,
        beta_lower: 1e-6,
        beta_upper: 1e6,
    };
    let mut client = ClientState::new(0, vec![0.25; dim], Preconditioner::Learned(DiagHessian::identity(dim, cfg).unwrap()));
    let (tau, rounds) = (2usize, 3u64);
    let logs: Vec<RoundLog> = (0..rounds).map(|r| RoundLog::new(r, tau, 2, vec![0.0; tau * 2]).unwrap()).collect();
    client_rebuild(&mut client, &logs, 0.1, &SeedSchedule::new(Seed(3))).unwrap();
    assert_eq!(client.model, vec![0.25; dim]);
    // h_t = (1 - nu)^t (h_0 - eps) + eps, iterated by hand
    let mut expected = 1.0f64;
    for _ in 0..rounds as usize * tau {
        expected = 0.8 * expected + 0.2 * (0.0 + 1e-3);
    }
    for h in client.precond.diag() {
        assert!((h - expected).abs() <= 1e-15, "{h} vs {expected}");
    }
    let closed = 0.8f64.powi(6) * (1.0 - 1e-3) + 1e-3;
    assert!((expected - closed).abs() < 1e-15);
}

#[test]
fn local_update_resets_model() {
    let task = logistic(10, 2, 4);
    let cfg = config(2, 2, 3, 2, 5);
    let mut sim = Simulation::new(&task, cfg.clone(), CostModel::default()).unwrap();
    sim.run_round().unwrap();
    sim.run_round().unwrap();
    let mut client = sim.clients()[0].clone();
    let schedule = *sim.schedule();
    let since = client.last_round;
    client_rebuild(&mut client, sim.server().ledger.fetch_since(since).unwrap(), cfg.eta, &schedule).unwrap();
    let before = client.model.clone();
    let update = client_local_update(&mut client, &task, sim.current_round(), &cfg, &schedule).unwrap();
    assert_eq!(client.model, before);
    assert_eq!(update.scalars.len(), 3 * 2);
    assert_eq!(update.fn_evals, 2 * 3 * 2);
}

#[test]
fn identical_clients_share_directions_and_scalars() {
    let task = quadratic(16, 2, 0.0, 9);
    let cfg = config(2, 2, 2, 3, 1);
    let schedule = SeedSchedule::new(Seed(cfg.perturbation_seed));
    let precond = Preconditioner::Learned(DiagHessian::from_diag((1..=16).map(f64::from).collect(), cfg.hessian).unwrap());
    let mut a = ClientState::new(0, vec![0.1; 16], precond.clone());
    let mut b = ClientState::new(1, vec![0.1; 16], precond.clone());
    let za = round_directions(&schedule, &a.precond, 0, 2, 3).unwrap();
    let zb = round_directions(&schedule, &b.precond, 0, 2, 3).unwrap();
    assert_eq!(za, zb);
    let ga = client_local_update(&mut a, &task, 0, &cfg, &schedule).unwrap();
    let gb = client_local_update(&mut b, &task, 0, &cfg, &schedule).unwrap();
    assert_eq!(ga.scalars, gb.scalars);
}

#[test]
fn curvature_only_scalar_at_stationary_point() {
    let a = vec![2.0, 1.5, 0.5, 1.0, 2.0, 0.25, 1.75, 0.5, 1.0, 2.0];
    let task = Task::Quadratic(QuadraticTask::new(a.clone(), vec![0.0; 10], vec![vec![0.0; 10]], None).unwrap());
    let mut cfg = config(1, 1, 1, 1, 1);
    cfg.mu = SmoothingParams::new(1e-6).unwrap();
    cfg.method = Method::Decomfl;
    let schedule = SeedSchedule::new(Seed(cfg.perturbation_seed));
    let mut client = ClientState::new(0, vec![0.0; 10], Preconditioner::Identity { dim: 10 });
    let z = round_directions(&schedule, &client.precond, 0, 1, 1).unwrap();
    let g = client_local_update(&mut client, &task, 0, &cfg, &schedule).unwrap().scalars[0];
    let quad: f64 = z[0].as_slice().iter().zip(&a).map(|(zi, ai)| ai * zi * zi).sum();
    assert!((g - 1e-6 * quad / 2.0).abs() <= 1e-12 * quad.max(1.0));
    assert!(g.abs() <= 1e-5);
}

#[test]
fn aggregation_is_the_cellwise_mean() {
    let single = aggregate_scalars(0, &[vec![1.5, -2.0, 0.25]], 1, 3, false).unwrap();
    assert_eq!(single.scalars(), &[1.5, -2.0, 0.25]);
    let pair = aggregate_scalars(4, &[vec![1.0; 6], vec![3.0; 6]], 2, 3, false).unwrap();
    assert_eq!(pair.scalars(), &[2.0; 6]);
    assert_eq!(pair.round(), 4);
    assert!(aggregate_scalars(0, &[vec![1.0; 5]], 2, 3, false).is_err());
}

#[test]
fn plain_method_equals_frozen_identity_curvature() {
    let task = quadratic(32, 6, 0.3, 5);
    let mut hiso = config(6, 3, 2, 4, 100);
    hiso.hessian.nu = 0.0;
    let mut plain = hiso.clone();
    plain.method = Method::Decomfl;
    let a = Simulation::new(&task, hiso, CostModel::default()).unwrap().run().unwrap();
    let b = Simulation::new(&task, plain, CostModel::default()).unwrap().run().unwrap();
    assert_eq!(a.to_jsonl(false), b.to_jsonl(false));
}

#[test]
fn zero_step_size_keeps_loss_constant() {
    let task = logistic(8, 3, 1);
    let mut cfg = config(3, 2, 2, 2, 10);
    cfg.eta = 0.0;
    let trace = Simulation::new(&task, cfg, CostModel::default()).unwrap().run().unwrap();
    assert!(trace.records.iter().all(|r| r.loss == trace.initial_loss));
}

#[test]
fn fetches_cover_every_round_once_per_client() {
    let task = quadratic(8, 6, 0.2, 3);
    let cfg = config(6, 2, 1, 2, 50);
    let mut sim = Simulation::new(&task, cfg.clone(), CostModel::default()).unwrap();
    let mut covered: Vec<Vec<u64>> = vec![Vec::new(); 6];
    for participants in sampling_plan(&cfg).unwrap() {
        for &c in &participants {
            let since = sim.server().ledger.last_round_of(c);
            covered[c as usize].extend(sim.server().ledger.fetch_since(since).unwrap().iter().map(|l| l.round()));
        }
        sim.run_round_with(&participants).unwrap();
    }
    for (c, rounds) in covered.iter_mut().enumerate() {
        let since = sim.server().ledger.last_round_of(c as ClientId);
        rounds.extend(sim.server().ledger.fetch_since(since).unwrap().iter().map(|l| l.round()));
        assert_eq!(*rounds, (0..50).collect::<Vec<_>>(), "client {c}");
    }
}

#[test]
fn ledger_alone_reproduces_the_server_model() {
    let task = logistic(12, 4, 8);
    let cfg = config(4, 2, 3, 2, 20);
    let mut sim = Simulation::new(&task, cfg.clone(), CostModel::default()).unwrap();
    sim.run().unwrap();
    let ledger = deserialize(&serialize(&sim.server().ledger)).unwrap();
    let schedule = SeedSchedule::new(ledger.header().root_seed);
    let mut model = task.initial_point();
    let mut precond = Preconditioner::initial(Method::Hiso, 12, cfg.hessian).unwrap();
    for log in ledger.logs() {
        apply_round(&mut model, &mut precond, &schedule, log, cfg.eta).unwrap();
    }
    assert_eq!(model, sim.server().model);
    assert_eq!(precond, sim.server().precond);
}

fn rotating_plan(clients: u32, rounds: u64) -> Vec<Vec<ClientId>> {
    (0..rounds)
        .map(|r| {
            let mut v = vec![(r as u32) % clients, (r as u32 + 1) % clients];
            v.sort_unstable();
            v
        })
        .collect()
}

#[test]
fn dense_reference_with_rotating_participation() {
    let task = quadratic(100, 5, 0.5, 21);
    let cfg = config(5, 2, 3, 2, 50);
    let plan = rotating_plan(5, 50);
    let fixed = vector_oracle_run(&task, &cfg, &plan, OracleMode::FixedOrder).unwrap();
    let dense = vector_oracle_run(&task, &cfg, &plan, OracleMode::Dense).unwrap();
    let mut sim = Simulation::new(&task, cfg, CostModel::default()).unwrap();
    let (mut fixed_gap, mut dense_gap) = (0.0f64, 0.0f64);
    for (r, participants) in plan.iter().enumerate() {
        sim.run_round_with(participants).unwrap();
        fixed_gap = fixed_gap.max(max_abs_gap(&sim.server().model, &fixed.models[r]));
        dense_gap = dense_gap.max(max_abs_gap(&sim.server().model, &dense.models[r]));
    }
    assert_eq!(fixed_gap, 0.0);
    assert!(dense_gap <= 1e-9, "{dense_gap}");
}

#[test]
fn single_client_single_round_reference() {
    let task = quadratic(10, 1, 0.0, 2);
    let cfg = config(1, 1, 1, 1, 1);
    let div = compare_with_oracle(&task, &cfg, OracleMode::Dense).unwrap();
    assert_eq!(div.max_abs, 0.0);
}

#[test]
fn wire_quantization_divergence_is_reported() {
    let task = quadratic(64, 4, 0.5, 11);
    let mut cfg = config(4, 2, 2, 3, 30);
    cfg.quantize_wire = true;
    let plan = sampling_plan(&cfg).unwrap();
    let oracle = vector_oracle_run(&task, &cfg, &plan, OracleMode::FixedOrder).unwrap();
    let mut sim = Simulation::new(&task, cfg, CostModel::default()).unwrap();
    let mut gaps = Vec::new();
    for (r, participants) in plan.iter().enumerate() {
        sim.run_round_with(participants).unwrap();
        gaps.push(max_abs_gap(&sim.server().model, &oracle.models[r]));
    }
    eprintln!("32-bit wire, max |x_scalar - x_dense| per round: {gaps:?}");
    assert!(gaps.iter().all(|g| g.is_finite()));
    assert!(gaps.iter().any(|g| *g > 0.0));
}
