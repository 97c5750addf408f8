//! Time-conditioned diagonal Gaussian hyper-policies `nu(theta | t)`.
//!
//! Parameter layout: mean-function weights first, then one log-sigma per
//! policy dimension when sigma is learned. When sigma is fixed it is stored
//! outside the trainable vector.
//!
//! Mean-function weight layouts:
//! * `Stationary`: `c[0..d]`.
//! * `Sinusoid`: per dimension `(A, phi, psi, B)` contiguous.
//! * `TemporalConvNet`: per layer `W[out][in][tap]` then bias, then the head
//!   `W[d][c]` and bias.

pub mod encoding;
pub mod tcn;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use encoding::{encode_time, PositionalEncoding};
pub use tcn::{Tape, TcnSpec};

use crate::error::{Error, Result};
use crate::math;

/// Behavioral period standard deviation in log space (`sigma = e^{1/2}`).
pub const BEHAVIORAL_LOG_SIGMA: f64 = 0.5;
/// Target period initial log-sigma.
pub const TARGET_LOG_SIGMA: f64 = -1.0;
/// Cap on pairwise log-divergences.
pub const LOG_DIVERGENCE_CAP: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanFunction {
    Stationary { dim: usize },
    Sinusoid { dim: usize },
    TemporalConvNet(TcnSpec),
}

/// Means over a contiguous time range, optionally with the tapes needed for pullbacks.
#[derive(Debug, Clone)]
pub struct MeanEval {
    first: u64,
    dim: usize,
    means: Vec<f64>,
    tapes: Vec<Tape>,
}

impl MeanEval {
    /// Wraps externally supplied means (layout: time-major, `dim` values per time).
    pub fn from_values(first: u64, dim: usize, means: Vec<f64>) -> Self {
        Self { first, dim, means, tapes: Vec::new() }
    }

    pub fn first(&self) -> u64 {
        self.first
    }

    pub fn len(&self) -> usize {
        self.means.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn at(&self, t: u64) -> &[f64] {
        let i = (t - self.first) as usize;
        &self.means[i * self.dim..(i + 1) * self.dim]
    }
}

impl MeanFunction {
    pub fn stationary(dim: usize) -> Self {
        MeanFunction::Stationary { dim }
    }

    pub fn sinusoid(dim: usize) -> Self {
        MeanFunction::Sinusoid { dim }
    }

    /// Convolution stack with the default encoding (dimension 8, base 10000).
    pub fn tcn(channels: Vec<usize>, kernel: usize, out_dim: usize) -> Result<Self> {
        let enc = PositionalEncoding::new(8, encoding::DEFAULT_BASE)?;
        Ok(MeanFunction::TemporalConvNet(TcnSpec::new(enc, channels, kernel, out_dim)?))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MeanFunction::Stationary { dim } | MeanFunction::Sinusoid { dim } if *dim == 0 => {
                Err(Error::Config("mean function dimension must be positive".into()))
            }
            MeanFunction::TemporalConvNet(s) => s.validate(),
            _ => Ok(()),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            MeanFunction::Stationary { dim } | MeanFunction::Sinusoid { dim } => *dim,
            MeanFunction::TemporalConvNet(s) => s.out_dim,
        }
    }

    pub fn num_weights(&self) -> usize {
        match self {
            MeanFunction::Stationary { dim } => *dim,
            MeanFunction::Sinusoid { dim } => 4 * dim,
            MeanFunction::TemporalConvNet(s) => s.num_params(),
        }
    }

    pub fn receptive_field(&self) -> u64 {
        match self {
            MeanFunction::TemporalConvNet(s) => s.receptive_field(),
            _ => 0,
        }
    }

    /// Stationary means start at zero; the other variants draw from their default scheme.
    pub fn init_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            MeanFunction::Stationary { dim } => vec![0.0; *dim],
            MeanFunction::Sinusoid { dim } => {
                let mut w = vec![0.0; 4 * dim];
                for i in 0..*dim {
                    w[4 * i] = rng.random_range(-1.0..1.0);
                    w[4 * i + 1] = rng.random_range(0.0..0.5);
                    w[4 * i + 2] = rng.random_range(-1.0..1.0);
                }
                w
            }
            MeanFunction::TemporalConvNet(s) => s.init_params(rng),
        }
    }

    pub fn eval(&self, w: &[f64], t: u64) -> Vec<f64> {
        match self {
            MeanFunction::Stationary { .. } => w.to_vec(),
            MeanFunction::Sinusoid { dim } => (0..*dim)
                .map(|i| {
                    let (a, phi, psi, b) = (w[4 * i], w[4 * i + 1], w[4 * i + 2], w[4 * i + 3]);
                    a * libm::sin(phi * t as f64 + psi) + b
                })
                .collect(),
            MeanFunction::TemporalConvNet(s) => s.forward(w, &s.window(t)),
        }
    }

    /// Means for every time in `first ..= last`. Encodings are computed once per time.
    pub fn eval_range(&self, w: &[f64], first: u64, last: u64, keep_tapes: bool) -> MeanEval {
        let d = self.output_dim();
        let n = (last + 1 - first) as usize;
        let mut means = Vec::with_capacity(n * d);
        let mut tapes = Vec::new();
        match self {
            MeanFunction::TemporalConvNet(s) => {
                let e = s.encoding.dim();
                let lo = first.saturating_sub(s.receptive_field());
                let mut cache = vec![0.0; (last + 1 - lo) as usize * e];
                for (i, tau) in (lo..=last).enumerate() {
                    s.encoding.encode_into(tau, &mut cache[i * e..(i + 1) * e]);
                }
                if keep_tapes {
                    tapes.reserve(n);
                }
                for t in first..=last {
                    let tape = s.forward_tape(w, &s.window_from_cache(t, lo, &cache));
                    means.extend_from_slice(tape.output());
                    if keep_tapes {
                        tapes.push(tape);
                    }
                }
            }
            _ => {
                for t in first..=last {
                    means.extend(self.eval(w, t));
                }
            }
        }
        MeanEval { first, dim: d, means, tapes }
    }

    /// Adds `J_mu(t)^T cot` to `grad` for a single time.
    pub fn vjp(&self, w: &[f64], t: u64, cot: &[f64], grad: &mut [f64]) {
        match self {
            MeanFunction::Stationary { dim } => {
                for i in 0..*dim {
                    grad[i] += cot[i];
                }
            }
            MeanFunction::Sinusoid { dim } => {
                let tf = t as f64;
                for i in 0..*dim {
                    let (a, phi, psi) = (w[4 * i], w[4 * i + 1], w[4 * i + 2]);
                    let arg = phi * tf + psi;
                    let (sn, cs) = (libm::sin(arg), libm::cos(arg));
                    grad[4 * i] += cot[i] * sn;
                    grad[4 * i + 1] += cot[i] * a * cs * tf;
                    grad[4 * i + 2] += cot[i] * a * cs;
                    grad[4 * i + 3] += cot[i];
                }
            }
            MeanFunction::TemporalConvNet(s) => {
                let tape = s.forward_tape(w, &s.window(t));
                s.backward(w, &tape, cot, grad);
            }
        }
    }

    /// Pulls per-time mean cotangents (layout as in `ev`) back to the weights, in ascending time order.
    pub fn pullback(&self, w: &[f64], ev: &MeanEval, cots: &[f64], grad: &mut [f64]) {
        let d = self.output_dim();
        for i in 0..ev.len() {
            let c = &cots[i * d..(i + 1) * d];
            if c.iter().all(|&x| x == 0.0) {
                continue;
            }
            let t = ev.first + i as u64;
            match self {
                MeanFunction::TemporalConvNet(s) if !ev.tapes.is_empty() => s.backward(w, &ev.tapes[i], c, grad),
                _ => self.vjp(w, t, c, grad),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HyperPolicyDoc {
    mean: MeanFunction,
    params: Vec<f64>,
    fixed_log_sigma: Option<Vec<f64>>,
}

/// Diagonal Gaussian `N(mu_rho(t), diag(sigma^2))` with time-independent sigma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HyperPolicyDoc", into = "HyperPolicyDoc")]
pub struct GaussianHyperPolicy {
    mean: MeanFunction,
    params: Vec<f64>,
    fixed_log_sigma: Option<Vec<f64>>,
}

impl TryFrom<HyperPolicyDoc> for GaussianHyperPolicy {
    type Error = Error;
    fn try_from(d: HyperPolicyDoc) -> Result<Self> {
        let hp = GaussianHyperPolicy { mean: d.mean, params: d.params, fixed_log_sigma: d.fixed_log_sigma };
        hp.check()?;
        Ok(hp)
    }
}

impl From<GaussianHyperPolicy> for HyperPolicyDoc {
    fn from(h: GaussianHyperPolicy) -> Self {
        HyperPolicyDoc { mean: h.mean, params: h.params, fixed_log_sigma: h.fixed_log_sigma }
    }
}

impl GaussianHyperPolicy {
    pub fn new(mean: MeanFunction, weights: Vec<f64>, log_sigma: Vec<f64>, learn_sigma: bool) -> Result<Self> {
        let hp = if learn_sigma {
            let mut params = weights;
            params.extend(log_sigma);
            GaussianHyperPolicy { mean, params, fixed_log_sigma: None }
        } else {
            GaussianHyperPolicy { mean, params: weights, fixed_log_sigma: Some(log_sigma) }
        };
        hp.check()?;
        Ok(hp)
    }

    fn check(&self) -> Result<()> {
        self.mean.validate()?;
        let d1 = self.mean.output_dim();
        let nw = self.mean.num_weights();
        let expect = nw + if self.fixed_log_sigma.is_some() { 0 } else { d1 };
        if self.params.len() != expect {
            return Err(Error::Config(format!(
                "parameter vector has length {}, architecture needs {expect}",
                self.params.len()
            )));
        }
        if let Some(ls) = &self.fixed_log_sigma {
            if ls.len() != d1 {
                return Err(Error::Config(format!("log-sigma has length {}, expected {d1}", ls.len())));
            }
        }
        if self.params.iter().chain(self.log_sigma()).any(|x| !x.is_finite()) {
            return Err(Error::Domain("hyper-policy parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn mean_function(&self) -> &MeanFunction {
        &self.mean
    }

    /// Trainable vector `rho`.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        let hp = GaussianHyperPolicy { mean: self.mean.clone(), params, fixed_log_sigma: self.fixed_log_sigma.clone() };
        hp.check()?;
        Ok(hp)
    }

    /// Same mean weights, sigma frozen at `log_sigma`.
    pub fn with_fixed_log_sigma(&self, log_sigma: Vec<f64>) -> Result<Self> {
        GaussianHyperPolicy::new(self.mean.clone(), self.weights().to_vec(), log_sigma, false)
    }

    /// Same mean weights, sigma trainable from `log_sigma` when `learn` holds.
    pub fn with_log_sigma(&self, log_sigma: Vec<f64>, learn: bool) -> Result<Self> {
        GaussianHyperPolicy::new(self.mean.clone(), self.weights().to_vec(), log_sigma, learn)
    }

    pub fn learns_sigma(&self) -> bool {
        self.fixed_log_sigma.is_none()
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.mean.num_weights()]
    }

    pub fn log_sigma(&self) -> &[f64] {
        match &self.fixed_log_sigma {
            Some(v) => v,
            None => &self.params[self.mean.num_weights()..],
        }
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma().iter().map(|&l| math::exp(l)).collect()
    }

    /// Policy-parameter dimension `d1`.
    pub fn dim(&self) -> usize {
        self.mean.output_dim()
    }

    /// Trainable dimension `d2`.
    pub fn param_dim(&self) -> usize {
        self.params.len()
    }

    pub fn mean(&self, t: u64) -> Vec<f64> {
        self.mean.eval(self.weights(), t)
    }

    pub fn means(&self, first: u64, last: u64, keep_tapes: bool) -> MeanEval {
        self.mean.eval_range(self.weights(), first, last, keep_tapes)
    }

    pub fn sample<R: Rng + ?Sized>(&self, t: u64, rng: &mut R) -> Vec<f64> {
        let mu = self.mean(t);
        self.sample_around(&mu, rng)
    }

    pub fn sample_around<R: Rng + ?Sized>(&self, mu: &[f64], rng: &mut R) -> Vec<f64> {
        mu.iter()
            .zip(self.log_sigma())
            .map(|(&m, &ls)| m + math::exp(ls) * crate::rng::normal(rng))
            .collect()
    }

    /// `-sum log sigma - d/2 log 2 pi`.
    pub fn log_normalizer(&self) -> f64 {
        -self.log_sigma().iter().sum::<f64>() - 0.5 * self.dim() as f64 * math::LN_2PI
    }

    /// Log-density given an already evaluated mean and precomputed inverse variances.
    #[inline]
    pub fn log_density_at(theta: &[f64], mu: &[f64], inv_var: &[f64], log_norm: f64) -> f64 {
        let mut q = 0.0;
        for i in 0..theta.len() {
            let d = theta[i] - mu[i];
            q += d * d * inv_var[i];
        }
        log_norm - 0.5 * q
    }

    pub fn inv_var(&self) -> Vec<f64> {
        self.log_sigma().iter().map(|&l| math::exp(-2.0 * l)).collect()
    }

    pub fn log_density(&self, theta: &[f64], t: u64) -> Result<f64> {
        self.check_theta(theta)?;
        let mu = self.mean(t);
        Ok(Self::log_density_at(theta, &mu, &self.inv_var(), self.log_normalizer()))
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Config(format!("theta has length {}, expected {}", theta.len(), self.dim())));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("theta must be finite".into()));
        }
        Ok(())
    }

    /// Gradient of `log nu(theta | t)` with respect to the trainable vector.
    pub fn grad_log_density(&self, theta: &[f64], t: u64) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        let mu = self.mean(t);
        let iv = self.inv_var();
        let cot: Vec<f64> = (0..self.dim()).map(|i| (theta[i] - mu[i]) * iv[i]).collect();
        let mut g = vec![0.0; self.param_dim()];
        self.mean.vjp(self.weights(), t, &cot, &mut g);
        if self.learns_sigma() {
            let nw = self.mean.num_weights();
            for i in 0..self.dim() {
                let d = theta[i] - mu[i];
                g[nw + i] = d * d * iv[i] - 1.0;
            }
        }
        Ok(g)
    }

    /// Maps cotangents on the means (layout of `ev`) and on log-sigma to the trainable vector.
    pub fn pullback(&self, ev: &MeanEval, mean_cot: &[f64], log_sigma_cot: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.param_dim()];
        self.mean.pullback(self.weights(), ev, mean_cot, &mut g);
        if self.learns_sigma() {
            let nw = self.mean.num_weights();
            g[nw..].copy_from_slice(log_sigma_cot);
        }
        g
    }

    /// `log d_a(nu(.|s) || nu(.|t)) = (a/2) sum (mu_s - mu_t)^2 / sigma^2` for equal covariances.
    pub fn log_renyi_exp(&self, order: f64, s: u64, t: u64) -> f64 {
        let (ms, mt) = (self.mean(s), self.mean(t));
        log_renyi_between(order, &ms, &mt, &self.inv_var())
    }

    /// Exponentiated Renyi-2 divergence; saturates at `exp(700)`.
    pub fn renyi2_exp(&self, s: u64, t: u64) -> f64 {
        math::exp(self.log_renyi_exp(2.0, s, t).min(LOG_DIVERGENCE_CAP))
    }
}

/// Log exponentiated Renyi divergence of order `a` between equal-covariance Gaussians.
pub fn log_renyi_between(order: f64, mu_p: &[f64], mu_q: &[f64], inv_var: &[f64]) -> f64 {
    let mut q = 0.0;
    for i in 0..mu_p.len() {
        let d = mu_p[i] - mu_q[i];
        q += d * d * inv_var[i];
    }
    0.5 * order * q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn stationary(c: &[f64], ls: &[f64], learn: bool) -> GaussianHyperPolicy {
        GaussianHyperPolicy::new(MeanFunction::stationary(c.len()), c.to_vec(), ls.to_vec(), learn).unwrap()
    }

    #[test]
    fn stationary_mean_ignores_time() {
        let hp = stationary(&[0.5, -0.2], &[0.0, 0.0], false);
        assert_eq!(hp.mean(0), vec![0.5, -0.2]);
        assert_eq!(hp.mean(12345), vec![0.5, -0.2]);
    }

    #[test]
    fn zero_amplitude_sinusoid() {
        let hp = GaussianHyperPolicy::new(MeanFunction::sinusoid(1), vec![0.0, 0.3, 1.1, 3.0], vec![0.0], false).unwrap();
        for t in [0, 5, 99] {
            assert_eq!(hp.mean(t), vec![3.0]);
        }
    }

    #[test]
    fn length_mismatch_is_config_error() {
        let r = GaussianHyperPolicy::new(MeanFunction::stationary(2), vec![0.0], vec![0.0, 0.0], false);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn log_density_examples() {
        let hp = stationary(&[0.0, 0.0], &[0.0, 0.0], false);
        assert!((hp.log_density(&[0.0, 0.0], 3).unwrap() + 1.837_877_066_409_345).abs() < 1e-12);
        let hp1 = stationary(&[0.0], &[0.0], false);
        assert!((hp1.log_density(&[1.0], 0).unwrap() + 1.418_938_533_204_672_7).abs() < 1e-12);
        assert_eq!(hp1.log_density(&[0.4], 0).unwrap(), hp1.log_density(&[-0.4], 0).unwrap());
        assert!(matches!(hp1.log_density(&[f64::NAN], 0), Err(Error::Domain(_))));
    }

    #[test]
    fn score_examples() {
        let hp = stationary(&[0.3], &[0.0], false);
        assert_eq!(hp.grad_log_density(&[1.0], 4).unwrap(), vec![0.7]);
        assert_eq!(hp.grad_log_density(&[0.3], 4).unwrap(), vec![0.0]);
    }

    #[test]
    fn renyi_examples() {
        let hp = GaussianHyperPolicy::new(MeanFunction::sinusoid(1), vec![1.0, 0.2, 0.0, 0.0], vec![0.0], false).unwrap();
        assert_eq!(hp.renyi2_exp(4, 4), 1.0);
        assert_eq!(hp.renyi2_exp(2, 9), hp.renyi2_exp(9, 2));
        let mu = [1.0];
        let nu = [0.0];
        assert!((math::exp(log_renyi_between(2.0, &mu, &nu, &[1.0])) - core::f64::consts::E).abs() < 1e-15);
        let st = stationary(&[1.0, 2.0], &[0.1, 0.2], true);
        assert_eq!(st.renyi2_exp(0, 77), 1.0);
    }

    #[test]
    fn sampling_is_reproducible_and_degenerates() {
        let hp = stationary(&[0.5], &[-60.0], false);
        let a = hp.sample(3, &mut stream(9, Stream::Sampling));
        assert!((a[0] - 0.5).abs() < 1e-20);
        let hp = stationary(&[0.5], &[0.5], false);
        let a = hp.sample(3, &mut stream(9, Stream::Sampling));
        let b = hp.sample(3, &mut stream(9, Stream::Sampling));
        assert_eq!(a, b);
    }

    #[test]
    fn range_eval_matches_pointwise() {
        let mf = MeanFunction::tcn(vec![8, 8, 4], 3, 2).unwrap();
        let w = mf.init_weights(&mut stream(2, Stream::Init));
        let ev = mf.eval_range(&w, 0, 30, true);
        for t in 0..=30 {
            assert_eq!(ev.at(t), mf.eval(&w, t).as_slice());
        }
    }
}
