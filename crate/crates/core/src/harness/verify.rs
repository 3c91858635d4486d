use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curvature::{diagnostics, gaussian_fourth_moment, DiagHessian, HessianConfig};
use crate::fedsim::{sampling_plan, vector_oracle_run, FedError, Method, OracleMode, RoundConfig, Simulation};
use crate::ledger::CostModel;
use crate::rng::{fill_gaussian, mix64, Seed};
use crate::tasks::{
    make_lognormal_spectrum, LogisticSpec, QuadraticSpec, QuadraticTask, Task, TaskSpec,
};
use crate::zo::{hessian_informed_direction, multi_perturbation_delta, rge_scalar, step_delta, SmoothingParams};

use super::report::{Check, VerificationReport};

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Monte Carlo estimate of `E[(z^T W z) z z^T]` for `z ~ N(0, diag(lambda))`.
pub fn fourth_moment_monte_carlo(lambda: &[f64], w: &[f64], samples: u64, seed: u64) -> Vec<f64> {
    let d = lambda.len();
    let scale: Vec<f64> = lambda.iter().map(|l| l.sqrt()).collect();
    let mut acc = vec![0.0; d * d];
    let mut z = vec![0.0; d];
    for n in 0..samples {
        fill_gaussian(Seed(mix64(seed) ^ n), &mut z);
        for (zi, s) in z.iter_mut().zip(&scale) {
            *zi *= s;
        }
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += z[i] * w[i * d + j] * z[j];
            }
        }
        for i in 0..d {
            for j in 0..d {
                acc[i * d + j] += q * z[i] * z[j];
            }
        }
    }
    acc.iter().map(|a| a / samples as f64).collect()
}

/// Largest entrywise relative error. Entries whose target is zero are
/// measured against the largest target magnitude instead.
pub fn max_relative_error(estimate: &[f64], target: &[f64]) -> f64 {
    let scale = target.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    estimate
        .iter()
        .zip(target)
        .map(|(e, t)| (e - t).abs() / if *t == 0.0 { scale } else { t.abs() })
        .fold(0.0, f64::max)
}

fn lemma_case(name: String, lambda: &[f64], w: &[f64], samples: u64, seed: u64) -> Check {
    let t = Instant::now();
    let target = gaussian_fourth_moment(lambda, w);
    let estimate = fourth_moment_monte_carlo(lambda, w, samples, seed);
    let err = max_relative_error(&estimate, &target);
    Check {
        name,
        passed: err <= 0.03,
        measured: err,
        tolerance: 0.03,
        samples,
        seed,
        runtime_ms: elapsed_ms(t),
        detail: format!("d = {}", lambda.len()),
    }
}

/// Random diagonal `Lambda` in `[0.5, 2]` and symmetric `W` with entries in
/// `[0.5, 1.5]`, `d` in `2..=6`.
pub fn random_lemma_pair(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=6usize);
    let lambda = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut w = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let v = rng.random_range(0.5..1.5);
            w[i * d + j] = v;
            w[j * d + i] = v;
        }
    }
    (lambda, w)
}

/// The Gaussian fourth-moment identity on random pairs plus the two
/// closed-form cases.
pub fn verify_fourth_moment(pairs: usize, samples: u64, seed: u64) -> VerificationReport {
    let mut report = VerificationReport::default();
    for i in 0..pairs {
        let s = mix64(mix64(seed) ^ i as u64);
        let (lambda, w) = random_lemma_pair(s);
        report.push(lemma_case(format!("fourth_moment_random_{i}"), &lambda, &w, samples, s));
    }
    let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    report.push(lemma_case("fourth_moment_standard".into(), &[1.0; 3], &identity, samples, mix64(seed ^ 0x51)));
    report.push(lemma_case(
        "fourth_moment_hand_case".into(),
        &[1.0, 4.0],
        &[2.0, 0.0, 0.0, 0.0],
        samples,
        mix64(seed ^ 0x52),
    ));
    report
}

/// Mean and standard error of `g z` over `samples` draws on a quadratic,
/// against `H^-1 grad f`. Returns the largest per-coordinate gap in
/// standard errors.
pub fn preconditioned_mean_check(
    name: &str,
    task: &QuadraticTask,
    x: &[f64],
    h: &[f64],
    mu: f64,
    samples: u64,
    seed: u64,
) -> Check {
    let t = Instant::now();
    let d = x.len();
    let smoothing = SmoothingParams::new(mu).expect("positive mu");
    let grad = task.client_grad(0, x);
    let target: Vec<f64> = grad.iter().zip(h).map(|(g, hi)| g / hi).collect();
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut u = vec![0.0; d];
    for n in 0..samples {
        fill_gaussian(Seed(mix64(seed) ^ n), &mut u);
        let z = hessian_informed_direction(h, u.clone()).expect("positive curvature");
        let g = rge_scalar(|y| task.client_loss(0, y), x, &z, smoothing).expect("finite loss");
        for (i, v) in step_delta(g, &z).into_iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    let nf = samples as f64;
    let mut worst = 0.0f64;
    for i in 0..d {
        let mean = sum[i] / nf;
        let var = (sq[i] - nf * mean * mean) / (nf - 1.0);
        let se = (var / nf).sqrt();
        worst = worst.max((mean - target[i]).abs() / se);
    }
    Check {
        name: name.into(),
        passed: worst <= 3.0,
        measured: worst,
        tolerance: 3.0,
        samples,
        seed,
        runtime_ms: elapsed_ms(t),
        detail: format!("d = {d}, mu = {mu:e}, gap in standard errors"),
    }
}

/// Unbiasedness of the Hessian-informed estimator on a rotated `d = 10`
/// quadratic with random diagonal `H`, and of the plain estimator on
/// `A = diag(1, 3)`.
pub fn verify_unbiasedness(samples: u64, seed: u64) -> VerificationReport {
    let mut report = VerificationReport::default();
    let task = QuadraticTask::from_spec(&QuadraticSpec {
        dim: 10,
        variance: 0.5,
        clients: 1,
        heterogeneity: 0.0,
        rotate: true,
        seed,
    })
    .expect("valid quadratic");
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x10));
    let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h: Vec<f64> = (0..10).map(|_| rng.random_range(0.25..4.0)).collect();
    report.push(preconditioned_mean_check("preconditioned_mean_d10", &task, &x, &h, 1e-5, samples, seed));

    let small = QuadraticTask::new(vec![1.0, 3.0], vec![0.0, 0.0], vec![vec![0.0, 0.0]], None).expect("valid");
    report.push(preconditioned_mean_check(
        "plain_mean_d2",
        &small,
        &[1.0, 1.0],
        &[1.0, 1.0],
        1e-5,
        samples,
        mix64(seed ^ 0x11),
    ));
    report
}

/// `lemmas` subcommand: fourth-moment identity plus unbiasedness.
pub fn verify_lemmas(samples: u64, seed: u64) -> VerificationReport {
    let mut report = verify_fourth_moment(5, samples, seed);
    report.extend(verify_unbiasedness(100_000, seed));
    report
}

/// Empirical variance of the first delta coordinate at `P = 8` against `P = 2`
/// on a fixed quadratic and point. Returns `(var_8, var_2)`.
pub fn multi_perturbation_variances(trials: u64, seed: u64) -> (f64, f64) {
    let task = QuadraticTask::from_spec(&QuadraticSpec {
        dim: 20,
        variance: 1.0,
        clients: 1,
        heterogeneity: 0.0,
        rotate: false,
        seed,
    })
    .expect("valid quadratic");
    let x = vec![0.5; 20];
    let h = vec![1.0; 20];
    let smoothing = SmoothingParams::default();
    let first_coordinate = |p: usize, stream: u64| {
        let mut values = Vec::with_capacity(trials as usize);
        let mut u = vec![0.0; 20];
        for n in 0..trials {
            let mut scalars = Vec::with_capacity(p);
            let mut directions = Vec::with_capacity(p);
            for j in 0..p {
                fill_gaussian(Seed(mix64(mix64(seed ^ stream) ^ (n * 64 + j as u64))), &mut u);
                let z = hessian_informed_direction(&h, u.clone()).expect("positive");
                scalars.push(rge_scalar(|y| task.client_loss(0, y), &x, &z, smoothing).expect("finite"));
                directions.push(z);
            }
            values.push(multi_perturbation_delta(&scalars, &directions).expect("arity")[0]);
        }
        let mean = values.iter().sum::<f64>() / trials as f64;
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0)
    };
    let v8 = first_coordinate(8, 8);
    let v2 = first_coordinate(2, 2);
    (v8, v2)
}

/// `var(P=8) <= 0.25 var(P=2)` with 30% slack.
pub fn verify_variance_law(trials: u64, seed: u64) -> Check {
    let t = Instant::now();
    let (v8, v2) = multi_perturbation_variances(trials, seed);
    let ratio = v8 / v2;
    Check {
        name: "multi_perturbation_variance".into(),
        passed: ratio <= 0.25 * 1.3,
        measured: ratio,
        tolerance: 0.25 * 1.3,
        samples: trials,
        seed,
        runtime_ms: elapsed_ms(t),
        detail: format!("var P=8 {v8:.4e}, var P=2 {v2:.4e}"),
    }
}

/// `zeta < 0.1 L kappa < 0.1 L d` for `H = diag(sigma) + eps` on a log-normal
/// spectrum. Measured value is `zeta / (L kappa)`.
pub fn verify_diagnostics_ordering(dim: usize, variance: f64, seed: u64) -> Check {
    let t = Instant::now();
    let sigma = make_lognormal_spectrum(dim, variance, seed).expect("valid spectrum");
    let l = sigma.iter().cloned().fold(0.0, f64::max);
    let config = HessianConfig::default();
    let h = DiagHessian::from_diag(sigma.iter().map(|s| s + config.epsilon).collect(), config).expect("valid");
    let diag = diagnostics(h.diag(), &sigma, l).expect("valid diagnostics");
    let lk = l * diag.effective_rank_kappa;
    let ld = l * dim as f64;
    Check {
        name: "diagnostics_ordering".into(),
        passed: diag.whitening_rank_zeta < 0.1 * lk && lk < 0.1 * ld,
        measured: diag.whitening_rank_zeta / lk,
        tolerance: 0.1,
        samples: dim as u64,
        seed,
        runtime_ms: elapsed_ms(t),
        detail: format!("zeta {:.3}, L kappa {:.3}, L d {:.3}", diag.whitening_rank_zeta, lk, ld),
    }
}

/// A random small run covering both task kinds, partial participation,
/// mini-batches and both methods.
pub fn fuzz_config(seed: u64) -> (TaskSpec, RoundConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed));
    let dim = rng.random_range(4..=128usize);
    let total = rng.random_range(2..=16usize);
    let sampled = rng.random_range(1..=total);
    let tau = rng.random_range(1..=4usize);
    let perturbations = rng.random_range(1..=8usize);
    let rounds = rng.random_range(3..=30u64);
    let task = if rng.random_bool(0.5) {
        TaskSpec::Quadratic(QuadraticSpec {
            dim,
            variance: rng.random_range(0.5..3.0),
            clients: total,
            heterogeneity: rng.random_range(0.0..1.0),
            rotate: rng.random_bool(0.3),
            seed: rng.random(),
        })
    } else {
        TaskSpec::Logistic(LogisticSpec {
            samples: total * rng.random_range(20..60usize),
            dim,
            clients: total,
            batch_size: rng.random_range(4..16usize),
            seed: rng.random(),
            ..LogisticSpec::default()
        })
    };
    let config = RoundConfig {
        total_clients: total,
        sampled_clients: sampled,
        tau,
        perturbations,
        eta: rng.random_range(1e-3..2e-2),
        rounds,
        method: if rng.random_bool(0.75) { Method::Hiso } else { Method::Decomfl },
        hessian: HessianConfig {
            nu: rng.random_range(0.01..0.5),
            ..HessianConfig::default()
        },
        sampling_seed: rng.random(),
        perturbation_seed: rng.random(),
        batch_seed: rng.random(),
        ..RoundConfig::default()
    };
    (task, config)
}

/// Largest per-round `max |x_scalar - x_oracle|` and the first round where it
/// is nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub max_abs: f64,
    pub first_round: Option<u64>,
    pub hessian_max_abs: f64,
}

/// Runs the scalar protocol and the dense reference on the same plan and
/// compares global models and Hessians round by round.
pub fn compare_with_oracle(task: &Task, config: &RoundConfig, mode: OracleMode) -> Result<Divergence, FedError> {
    let plan = sampling_plan(config)?;
    let oracle = vector_oracle_run(task, config, &plan, mode)?;
    let mut sim = Simulation::new(task, config.clone(), CostModel::default())?;
    let mut out = Divergence {
        max_abs: 0.0,
        first_round: None,
        hessian_max_abs: 0.0,
    };
    for (r, participants) in plan.iter().enumerate() {
        sim.run_round_with(participants)?;
        let gap = max_abs_gap(&sim.server().model, &oracle.models[r]);
        let hgap = max_abs_gap(&sim.server().precond.diag(), &oracle.hessians[r]);
        if (gap > 0.0 || hgap > 0.0) && out.first_round.is_none() {
            out.first_round = Some(r as u64);
        }
        out.max_abs = out.max_abs.max(gap);
        out.hessian_max_abs = out.hessian_max_abs.max(hgap);
    }
    Ok(out)
}

pub fn max_abs_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Scalar protocol against the fixed-order dense reference on `count` fuzzed
/// configurations; every one must agree bitwise.
pub fn verify_equivalence(count: usize, seed: u64) -> VerificationReport {
    let mut report = VerificationReport::default();
    for i in 0..count {
        let s = seed.wrapping_add(i as u64);
        report.push(equivalence_check(format!("equivalence_{s}"), s, OracleMode::FixedOrder, 0.0));
    }
    report
}

pub fn equivalence_check(name: String, seed: u64, mode: OracleMode, tolerance: f64) -> Check {
    let t = Instant::now();
    let (spec, config) = fuzz_config(seed);
    let outcome = spec
        .build()
        .map_err(|e| e.to_string())
        .and_then(|task| compare_with_oracle(&task, &config, mode).map_err(|e| e.to_string()));
    match outcome {
        Ok(div) => Check {
            name,
            passed: div.max_abs.max(div.hessian_max_abs) <= tolerance,
            measured: div.max_abs.max(div.hessian_max_abs),
            tolerance,
            samples: config.rounds,
            seed,
            runtime_ms: elapsed_ms(t),
            detail: format!(
                "d = {}, M = {}, m = {}, tau = {}, P = {}, {:?}{}",
                spec.dim(),
                config.total_clients,
                config.sampled_clients,
                config.tau,
                config.perturbations,
                config.method,
                div.first_round.map(|r| format!(", diverged at round {r}")).unwrap_or_default()
            ),
        },
        Err(e) => Check {
            name,
            passed: false,
            measured: f64::NAN,
            tolerance,
            samples: config.rounds,
            seed,
            runtime_ms: elapsed_ms(t),
            detail: e,
        },
    }
}
