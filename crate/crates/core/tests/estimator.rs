use hiso::curvature::gaussian_fourth_moment;
use hiso::rng::{fill_gaussian, mix64, Seed};
use hiso::tasks::QuadraticTask;
use hiso::zo::{rge_scalar, step_delta, Direction, SmoothingParams};

#[test]
fn plain_delta_mean_matches_gradient() {
    let task = QuadraticTask::new(vec![1.0, 2.0, 4.0], vec![0.0; 3], vec![vec![0.0; 3]], None).unwrap();
    let x = [2.0, 1.0, 0.5];
    let grad = task.client_grad(0, &x);
    let smoothing = SmoothingParams::new(1e-4).unwrap();
    let n = 100_000u64;
    let mut sum = [0.0; 3];
    let mut u = vec![0.0; 3];
    for i in 0..n {
        fill_gaussian(Seed(mix64(77) ^ i), &mut u);
        let z = Direction::new(u.clone());
        let g = rge_scalar(|y| task.client_loss(0, y), &x, &z, smoothing).unwrap();
        for (s, v) in sum.iter_mut().zip(step_delta(g, &z)) {
            *s += v;
        }
    }
    for j in 0..3 {
        let mean = sum[j] / n as f64;
        assert!((mean - grad[j]).abs() <= 0.02 * grad[j].abs(), "{j}: {mean} vs {}", grad[j]);
    }
}

#[test]
fn fourth_moment_closed_forms() {
    let identity = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let t = gaussian_fourth_moment(&[1.0; 3], &identity);
    assert_eq!(t, vec![5.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 5.0]);
    let t = gaussian_fourth_moment(&[1.0, 4.0], &[2.0, 0.0, 0.0, 0.0]);
    assert_eq!(t, vec![6.0, 0.0, 0.0, 8.0]);
}

#[test]
fn standard_case_is_trace_plus_twice_w() {
    let w = [2.0, 0.5, 0.5, 1.0];
    let t = gaussian_fourth_moment(&[1.0, 1.0], &w);
    let trace = 3.0;
    assert_eq!(t, vec![trace + 4.0, 1.0, 1.0, trace + 2.0]);
}
