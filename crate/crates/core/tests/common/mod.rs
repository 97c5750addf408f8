#![allow(dead_code)]

use polis_core::estimation::{History, Record};
use polis_core::hyper_policy::{GaussianHyperPolicy, MeanFunction};
use polis_core::rng::{normal, stream, SimRng, Stream};
use rand::Rng;

pub fn rng(seed: u64) -> SimRng {
    stream(seed, Stream::Init)
}

/// Small TCN over two policy dimensions with learned sigma.
pub fn small_tcn(rng: &mut SimRng) -> GaussianHyperPolicy {
    let mean = MeanFunction::tcn(vec![4, 3], 2, 2).unwrap();
    let w = mean.init_weights(rng);
    let ls = vec![rng.random_range(-0.6..0.2), rng.random_range(-0.6..0.2)];
    GaussianHyperPolicy::new(mean, w, ls, true).unwrap()
}

pub fn random_sinusoid(rng: &mut SimRng, dim: usize, learn_sigma: bool) -> GaussianHyperPolicy {
    let mut w = Vec::new();
    for _ in 0..dim {
        w.extend([rng.random_range(-1.0..1.0), rng.random_range(0.1..0.6), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)]);
    }
    let ls = (0..dim).map(|_| rng.random_range(-0.3..0.3)).collect();
    GaussianHyperPolicy::new(MeanFunction::sinusoid(dim), w, ls, learn_sigma).unwrap()
}

/// History of `alpha` records with `theta` drawn around `hp` (widened) and random rewards.
pub fn history_around(hp: &GaussianHyperPolicy, first: u64, alpha: usize, rng: &mut SimRng) -> History {
    let d = hp.dim();
    let sig = hp.sigma();
    let recs = (0..alpha as u64)
        .map(|i| {
            let t = first + i;
            let mu = hp.mean(t);
            let theta = (0..d).map(|k| mu[k] + 1.3 * sig[k] * normal(rng)).collect();
            Record { t, theta, reward: rng.random_range(-1.0..1.0), exogenous: vec![0.0], controllable: vec![] }
        })
        .collect();
    History::from_records(alpha, recs).unwrap()
}

/// Central differences of `f` along every parameter of `hp`.
pub fn fd_grad<F: Fn(&GaussianHyperPolicy) -> f64>(hp: &GaussianHyperPolicy, f: F, h: f64) -> Vec<f64> {
    let rho = hp.params().to_vec();
    (0..rho.len())
        .map(|i| {
            let mut p = rho.clone();
            p[i] = rho[i] + h;
            let up = f(&hp.with_params(p.clone()).unwrap());
            p[i] = rho[i] - h;
            let dn = f(&hp.with_params(p).unwrap());
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm, with a floor on the scale.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    n(&diff) / n(a).max(n(b)).max(floor)
}
