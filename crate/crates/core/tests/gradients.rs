mod common;

use common::*;
use polis_core::divergence::BoundMethod;
use polis_core::estimation::{future_return, EstimatorConfig};
use polis_core::objective::{self, SurrogateConfig};

const POINTS: usize = 50;
const STEP: f64 = 1e-5;

fn cfg() -> EstimatorConfig {
    EstimatorConfig { alpha: 10, beta: 4, gamma: 0.95, omega: 0.9 }
}

#[test]
fn log_density_matches_finite_differences() {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let hp = if p % 2 == 0 { small_tcn(&mut r) } else { random_sinusoid(&mut r, 2, true) };
        let t = 3 + p as u64;
        let theta = hp.sample(t, &mut r);
        let an = hp.grad_log_density(&theta, t).unwrap();
        let fd = fd_grad(&hp, |q| q.log_density(&theta, t).unwrap(), STEP);
        worst = worst.max(rel_err(&an, &fd, 1e-8));
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn future_pathwise_matches_finite_differences() {
    let mut r = rng(2);
    let cfg = cfg();
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let hp = if p % 2 == 0 { small_tcn(&mut r) } else { random_sinusoid(&mut r, 2, true) };
        let h = history_around(&hp, 5, cfg.alpha, &mut r);
        let (path, _) = objective::grad_future_parts(&h, &hp, &cfg).unwrap();
        let fd = fd_grad(&hp, |q| future_return(&h, q, &cfg).unwrap(), STEP);
        worst = worst.max(rel_err(&path, &fd, 1e-8));
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn penalty_matches_finite_differences() {
    let mut r = rng(3);
    let cfg = cfg();
    let closed = [BoundMethod::UniformPsi, BoundMethod::UniformPhi, BoundMethod::TwoStepsPsiFirst, BoundMethod::TwoStepsPhiFirst];
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let hp = if p % 2 == 0 { small_tcn(&mut r) } else { random_sinusoid(&mut r, 2, true) };
        let h = history_around(&hp, 5, cfg.alpha, &mut r);
        let scfg = SurrogateConfig { lambda: 3.0, bound: closed[p % closed.len()], ..SurrogateConfig::default() };
        let an = objective::grad_penalty(&h, &hp, &cfg, &scfg).unwrap();
        let fd = fd_grad(&hp, |q| -objective::evaluate(&h, q, &cfg, &scfg, None).unwrap().penalty, STEP);
        worst = worst.max(rel_err(&an, &fd, 1e-8));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn direct_opt_penalty_gradient_is_close_once_converged() {
    let mut r = rng(4);
    let cfg = cfg();
    let scfg = SurrogateConfig { lambda: 3.0, bound: BoundMethod::DirectOptReset, direct_iters: 10000, ..SurrogateConfig::default() };
    for _ in 0..5 {
        let hp = random_sinusoid(&mut r, 1, true);
        let h = history_around(&hp, 5, cfg.alpha, &mut r);
        let an = objective::grad_penalty(&h, &hp, &cfg, &scfg).unwrap();
        let fd = fd_grad(&hp, |q| -objective::evaluate(&h, q, &cfg, &scfg, None).unwrap().penalty, 1e-4);
        let e = rel_err(&an, &fd, 1e-8);
        assert!(e < 1e-2, "relative error {e}");
    }
}

#[test]
fn surrogate_with_frozen_samples_matches_finite_differences() {
    let mut r = rng(5);
    let cfg = cfg();
    let mut worst: f64 = 0.0;
    for p in 0..POINTS {
        let hp = if p % 2 == 0 { small_tcn(&mut r) } else { random_sinusoid(&mut r, 2, true) };
        let h = history_around(&hp, 5, cfg.alpha, &mut r);
        let scfg = SurrogateConfig { lambda: 0.5, n_replays: 0, ..SurrogateConfig::default() };
        let (path, _) = objective::grad_future_parts(&h, &hp, &cfg).unwrap();
        let pen = objective::grad_penalty(&h, &hp, &cfg, &scfg).unwrap();
        let an: Vec<f64> = path.iter().zip(&pen).map(|(a, b)| a + b).collect();
        let fd = fd_grad(&hp, |q| objective::surrogate(&h, q, &cfg, &scfg).unwrap(), STEP);
        worst = worst.max(rel_err(&an, &fd, 1e-8));
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn stationary_policy_has_no_penalty_gradient_on_offsets() {
    use polis_core::hyper_policy::{GaussianHyperPolicy, MeanFunction};
    let cfg = cfg();
    let hp = GaussianHyperPolicy::new(MeanFunction::stationary(2), vec![0.3, -0.2], vec![0.0, 0.0], false).unwrap();
    let mut r = rng(6);
    let h = history_around(&hp, 0, cfg.alpha, &mut r);
    let scfg = SurrogateConfig { lambda: 10.0, ..SurrogateConfig::default() };
    let g = objective::grad_penalty(&h, &hp, &cfg, &scfg).unwrap();
    assert!(g.iter().all(|x| x.abs() < 1e-12), "{g:?}");
    let scfg0 = SurrogateConfig { lambda: 0.0, ..SurrogateConfig::default() };
    let hp2 = random_sinusoid(&mut r, 2, true);
    let h2 = history_around(&hp2, 0, cfg.alpha, &mut r);
    assert!(objective::grad_penalty(&h2, &hp2, &cfg, &scfg0).unwrap().iter().all(|&x| x == 0.0));
}
