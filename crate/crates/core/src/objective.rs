//! Variance-penalized surrogate
//! `L = J_future + J_past - lambda sqrt(C_gamma(a)^2 + C_gamma(b)^2 V)`
//! and its gradient, where `V` is a `d_2`-scale mixture bound (`C_gamma(b)^2 V = C_omega B`).

use alloc::vec;
use alloc::vec::Vec;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::divergence::{self, Bound, BoundMethod, MixtureDivergences, MixtureSpec, VariationalParams};
use crate::env::{Dynamics, EnvDynamics, ExogenousTrace};
use crate::error::{Error, Result};
use crate::estimation::{c_gamma, c_omega, future_return_from_table, past_return_from, EstimatorConfig, History, ImportanceTable, Record};
use crate::hyper_policy::{GaussianHyperPolicy, MeanEval};
use crate::math;

pub const DEFAULT_REPLAYS: usize = 100;

/// How replayed rewards are credited to the sampled parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayCredit {
    /// `sum_t v_t r_t grad log nu(theta_t | t)`.
    SameStep,
    /// `sum_t grad log nu(theta_t | t) sum_{u >= t} v_u r_u`.
    RewardToGo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub lambda: f64,
    pub n_replays: usize,
    pub bound: BoundMethod,
    pub direct_iters: usize,
    pub credit: ReplayCredit,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            n_replays: DEFAULT_REPLAYS,
            bound: BoundMethod::TwoStepsPsiFirst,
            direct_iters: divergence::DEFAULT_DIRECT_ITERS,
            credit: ReplayCredit::SameStep,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config("lambda must be finite and nonnegative".into()));
        }
        if self.direct_iters == 0 {
            return Err(Error::Config("direct optimization needs at least one iteration".into()));
        }
        Ok(())
    }

    /// `lambda = sqrt(((1 - delta)/delta) 2 R^2)`.
    pub fn lambda_for_confidence(delta: f64, r_max: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Domain("delta must lie in (0, 1)".into()));
        }
        Ok(math::sqrt((1.0 - delta) / delta * 2.0 * r_max * r_max))
    }
}

/// Gradient split by objective term; `penalty` is the gradient of the negated penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub future: Vec<f64>,
    pub past: Vec<f64>,
    pub penalty: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    math::sqrt(v.iter().map(|x| x * x).sum())
}

impl Gradient {
    pub fn zeros(n: usize) -> Self {
        Self { future: vec![0.0; n], past: vec![0.0; n], penalty: vec![0.0; n] }
    }

    pub fn total(&self) -> Vec<f64> {
        (0..self.future.len()).map(|i| self.future[i] + self.past[i] + self.penalty[i]).collect()
    }

    pub fn norms(&self) -> (f64, f64, f64) {
        (norm(&self.future), norm(&self.past), norm(&self.penalty))
    }

    pub fn is_finite(&self) -> bool {
        self.future.iter().chain(&self.past).chain(&self.penalty).all(|x| x.is_finite())
    }
}

/// Values of every surrogate ingredient at the current parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub future_return: f64,
    pub past_return: f64,
    pub combined: f64,
    /// `d_2`-scale mixture bound `V`.
    pub bound: f64,
    /// `B = C_gamma(b)^2 V / C_omega`.
    pub b_value: f64,
    pub penalty: f64,
    pub surrogate: f64,
    pub saturated: bool,
}

/// Means over `T-a+1 ..= T+b` with tapes, shared by every term.
struct Prepared<'a> {
    window: &'a [Record],
    latest: u64,
    means: MeanEval,
    inv_var: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(h: &'a History, hp: &GaussianHyperPolicy, cfg: &EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        let window = h.window(cfg.alpha)?;
        if window[0].theta.len() != hp.dim() {
            return Err(Error::Config("history theta dimension does not match the hyper-policy".into()));
        }
        let first = window[0].t;
        let latest = first + cfg.alpha as u64 - 1;
        let means = hp.means(first, latest + cfg.beta as u64, true);
        Ok(Self { window, latest, means, inv_var: hp.inv_var() })
    }

    fn n_times(&self) -> usize {
        self.means.len()
    }
}

/// Accumulates `c * grad log nu(theta | t)` as cotangents on the mean at `t` and on log-sigma.
#[inline]
fn add_score(c: f64, theta: &[f64], mu: &[f64], inv_var: &[f64], mean_cot: &mut [f64], ls_cot: &mut [f64]) {
    for k in 0..theta.len() {
        let d = theta[k] - mu[k];
        mean_cot[k] += c * d * inv_var[k];
        ls_cot[k] += c * (d * d * inv_var[k] - 1.0);
    }
}

struct FutureParts {
    value: f64,
    path_mean: Vec<f64>,
    path_ls: Vec<f64>,
    score_mean: Vec<f64>,
    score_ls: Vec<f64>,
}

fn future_parts(p: &Prepared, hp: &GaussianHyperPolicy, cfg: &EstimatorConfig) -> Result<FutureParts> {
    let tab = ImportanceTable::build(p.window, hp, &p.means, cfg)?;
    let rewards: Vec<f64> = p.window.iter().map(|r| r.reward).collect();
    let value = future_return_from_table(&tab, &rewards);
    let d = hp.dim();
    let n = p.n_times();
    let (alpha, beta) = (tab.alpha, tab.beta);
    let mut path_mean = vec![0.0; n * d];
    let mut path_ls = vec![0.0; d];
    let mut score_mean = vec![0.0; n * d];
    let mut score_ls = vec![0.0; d];
    for (i, rec) in p.window.iter().enumerate() {
        if rec.reward == 0.0 {
            continue;
        }
        let log_num = tab.log_future_mix(i);
        let c = math::exp(tab.log_past_w[i] + log_num - tab.log_den[i]) * rec.reward;
        if c == 0.0 {
            continue;
        }
        // future components: d/d log nu(theta_t|s) = c * softmax_s
        for j in 0..beta {
            let w = c * math::exp(tab.log_future_g[j] + tab.log_nu_future[i * beta + j] - log_num);
            if w == 0.0 {
                continue;
            }
            let idx = alpha + j;
            add_score(w, &rec.theta, p.means.at(tab.latest + 1 + j as u64), &p.inv_var, &mut path_mean[idx * d..(idx + 1) * d], &mut path_ls);
        }
        // past components: d/d log nu(theta_t|k) = -c * pi_tk
        for k in 0..alpha {
            let w = -c * math::exp(tab.log_past_w[k] + tab.log_nu_past[i * alpha + k] - tab.log_den[i]);
            if w == 0.0 {
                continue;
            }
            add_score(w, &rec.theta, p.means.at(tab.first + k as u64), &p.inv_var, &mut path_mean[k * d..(k + 1) * d], &mut path_ls);
        }
        add_score(c, &rec.theta, p.means.at(rec.t), &p.inv_var, &mut score_mean[i * d..(i + 1) * d], &mut score_ls);
    }
    Ok(FutureParts { value, path_mean, path_ls, score_mean, score_ls })
}

struct PenaltyParts {
    bound: Bound,
    penalty: f64,
    mean_cot: Vec<f64>,
    ls_cot: Vec<f64>,
    clipped: bool,
}

fn penalty_parts(
    latest: u64,
    means: &MeanEval,
    inv_var: &[f64],
    cfg: &EstimatorConfig,
    scfg: &SurrogateConfig,
    warm: Option<&VariationalParams>,
) -> Result<PenaltyParts> {
    let spec = MixtureSpec::from_config(latest, cfg)?;
    let div = MixtureDivergences::from_means(2.0, &spec, means, inv_var)?;
    let bound = divergence::evaluate(scfg.bound, &div, warm, scfg.direct_iters)?;
    let ca = c_gamma(cfg.gamma, cfg.alpha);
    let cb = c_gamma(cfg.gamma, cfg.beta);
    let v = bound.value();
    let root = math::sqrt(ca * ca + cb * cb * v);
    let penalty = scfg.lambda * root;
    let d = inv_var.len();
    let mut mean_cot = vec![0.0; means.len() * d];
    let mut ls_cot = vec![0.0; d];
    let mut clipped = false;
    if scfg.lambda > 0.0 {
        // d(-P)/d log V = -lambda cb^2 V / (2 root)
        let scale = -scfg.lambda * cb * cb * v / (2.0 * root);
        let g: Vec<f64> = bound.grad_log_d.iter().map(|x| x * scale).collect();
        clipped = divergence::pullback_log_d(&div, &spec, &g, means, inv_var, &mut mean_cot, &mut ls_cot);
    }
    Ok(PenaltyParts { bound, penalty, mean_cot, ls_cot, clipped })
}

fn evaluation(future: f64, past: f64, pen: &PenaltyParts, cfg: &EstimatorConfig) -> Evaluation {
    let v = pen.bound.value();
    Evaluation {
        future_return: future,
        past_return: past,
        combined: future + past,
        bound: v,
        b_value: divergence::b_from_bound(v, cfg),
        penalty: pen.penalty,
        surrogate: future + past - pen.penalty,
        saturated: pen.bound.saturated,
    }
}

/// Surrogate value.
pub fn surrogate(h: &History, hp: &GaussianHyperPolicy, cfg: &EstimatorConfig, scfg: &SurrogateConfig) -> Result<f64> {
    Ok(evaluate(h, hp, cfg, scfg, None)?.surrogate)
}

/// Every surrogate ingredient.
pub fn evaluate(
    h: &History,
    hp: &GaussianHyperPolicy,
    cfg: &EstimatorConfig,
    scfg: &SurrogateConfig,
    warm: Option<&VariationalParams>,
) -> Result<Evaluation> {
    scfg.validate()?;
    let p = Prepared::new(h, hp, cfg)?;
    let tab = ImportanceTable::build(p.window, hp, &p.means, cfg)?;
    let rewards: Vec<f64> = p.window.iter().map(|r| r.reward).collect();
    let fut = future_return_from_table(&tab, &rewards);
    let past = past_return_from(rewards.iter().copied(), cfg);
    let pen = penalty_parts(p.latest, &p.means, &p.inv_var, cfg, scfg, warm)?;
    Ok(evaluation(fut, past, &pen, cfg))
}

/// Future-return gradient split into the ratio (pathwise) part and the score part.
pub fn grad_future_parts(h: &History, hp: &GaussianHyperPolicy, cfg: &EstimatorConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = Prepared::new(h, hp, cfg)?;
    let f = future_parts(&p, hp, cfg)?;
    Ok((hp.pullback(&p.means, &f.path_mean, &f.path_ls), hp.pullback(&p.means, &f.score_mean, &f.score_ls)))
}

/// Single-sample gradient estimate of the expected future return.
pub fn grad_future(h: &History, hp: &GaussianHyperPolicy, cfg: &EstimatorConfig) -> Result<Vec<f64>> {
    let (a, b) = grad_future_parts(h, hp, cfg)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect())
}

/// Gradient of the negated penalty.
pub fn grad_penalty(h: &History, hp: &GaussianHyperPolicy, cfg: &EstimatorConfig, scfg: &SurrogateConfig) -> Result<Vec<f64>> {
    scfg.validate()?;
    let p = Prepared::new(h, hp, cfg)?;
    let pen = penalty_parts(p.latest, &p.means, &p.inv_var, cfg, scfg, None)?;
    Ok(hp.pullback(&p.means, &pen.mean_cot, &pen.ls_cot))
}

/// Penalty value, its gradient and the bound, for a window ending at `latest`; no history needed.
pub fn penalty_only(
    latest: u64,
    hp: &GaussianHyperPolicy,
    cfg: &EstimatorConfig,
    scfg: &SurrogateConfig,
    warm: Option<&VariationalParams>,
) -> Result<(f64, Vec<f64>, Bound)> {
    scfg.validate()?;
    let spec = MixtureSpec::from_config(latest, cfg)?;
    let means = hp.means(spec.past_times[0], latest + cfg.beta as u64, true);
    let pen = penalty_parts(latest, &means, &hp.inv_var(), cfg, scfg, warm)?;
    let g = hp.pullback(&means, &pen.mean_cot, &pen.ls_cot);
    Ok((pen.penalty, g, pen.bound))
}

fn replay_cotangents(
    dynamics: &EnvDynamics,
    trace: &ExogenousTrace,
    p: &Prepared,
    hp: &GaussianHyperPolicy,
    cfg: &EstimatorConfig,
    n_replays: usize,
    credit: ReplayCredit,
    rng: &mut dyn RngCore,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = hp.dim();
    let alpha = p.window.len();
    let first = p.window[0].t;
    let mut mean_cot = vec![0.0; p.n_times() * d];
    let mut ls_cot = vec![0.0; d];
    if n_replays == 0 {
        return Ok((mean_cot, ls_cot));
    }
    let xu = trace.window(first, p.latest + 1)?;
    let du = trace.dim();
    let co = c_omega(cfg.omega, cfg.alpha);
    let v: Vec<f64> = cfg.past_weights().iter().zip(cfg.past_discounts()).map(|(w, g)| w * g / co).collect();
    let sigma = hp.sigma();
    let xc0 = &p.window[0].controllable;

    let mut thetas = vec![0.0; n_replays * alpha * d];
    let mut credit_vals = vec![0.0; n_replays * alpha];
    let mut xc = xc0.clone();
    for n in 0..n_replays {
        xc.copy_from_slice(xc0);
        for i in 0..alpha {
            let mu = p.means.at(first + i as u64);
            let th = &mut thetas[(n * alpha + i) * d..(n * alpha + i + 1) * d];
            for k in 0..d {
                th[k] = mu[k] + sigma[k] * crate::rng::normal(rng);
            }
            let tr = dynamics.transition(th, &mut xc, &xu[i * du..(i + 1) * du], &xu[(i + 1) * du..(i + 2) * du], rng);
            credit_vals[n * alpha + i] = v[i] * tr.reward;
        }
        if credit == ReplayCredit::RewardToGo {
            let row = &mut credit_vals[n * alpha..(n + 1) * alpha];
            for i in (0..alpha.saturating_sub(1)).rev() {
                row[i] += row[i + 1];
            }
        }
    }
    // leave-one-out baseline per time keeps every replay's weight independent of its own sample
    let mut sums = vec![0.0; alpha];
    for n in 0..n_replays {
        for i in 0..alpha {
            sums[i] += credit_vals[n * alpha + i];
        }
    }
    let inv_n = 1.0 / n_replays as f64;
    for n in 0..n_replays {
        for i in 0..alpha {
            let own = credit_vals[n * alpha + i];
            let base = if n_replays > 1 { (sums[i] - own) / (n_replays - 1) as f64 } else { 0.0 };
            let c = (own - base) * inv_n;
            if c == 0.0 {
                continue;
            }
            let th = &thetas[(n * alpha + i) * d..(n * alpha + i + 1) * d];
            add_score(c, th, p.means.at(first + i as u64), &p.inv_var, &mut mean_cot[i * d..(i + 1) * d], &mut ls_cot);
        }
    }
    Ok((mean_cot, ls_cot))
}

/// Score-function gradient of the past return, estimated from `n_replays`
/// trajectories re-simulated on the recorded exogenous path.
#[allow(clippy::too_many_arguments)]
pub fn grad_past_replay(
    dynamics: &EnvDynamics,
    trace: &ExogenousTrace,
    h: &History,
    hp: &GaussianHyperPolicy,
    cfg: &EstimatorConfig,
    n_replays: usize,
    credit: ReplayCredit,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let p = Prepared::new(h, hp, cfg)?;
    let (m, l) = replay_cotangents(dynamics, trace, &p, hp, cfg, n_replays, credit, rng)?;
    Ok(hp.pullback(&p.means, &m, &l))
}

/// Which terms enter a training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terms {
    /// Future return, replayed past return and penalty.
    Full,
    /// Replayed past return only.
    PastOnly,
}

/// Output of one full gradient evaluation.
#[derive(Debug, Clone)]
pub struct Step {
    pub eval: Evaluation,
    pub grad: Gradient,
    pub bound: Bound,
    pub clipped: bool,
}

/// Surrogate value and gradient in one pass over shared means.
///
/// With `decompose` unset the whole gradient is reported under `future`
/// (one pullback instead of three).
#[allow(clippy::too_many_arguments)]
pub fn surrogate_step(
    replay_env: Option<(&EnvDynamics, &ExogenousTrace)>,
    h: &History,
    hp: &GaussianHyperPolicy,
    cfg: &EstimatorConfig,
    scfg: &SurrogateConfig,
    terms: Terms,
    warm: Option<&VariationalParams>,
    decompose: bool,
    rng: &mut dyn RngCore,
) -> Result<Step> {
    scfg.validate()?;
    let p = Prepared::new(h, hp, cfg)?;
    let d = hp.dim();
    let n = p.n_times() * d;
    let rewards: Vec<f64> = p.window.iter().map(|r| r.reward).collect();
    let past = past_return_from(rewards.iter().copied(), cfg);

    let (fut_val, mut fut_mean, mut fut_ls) = match terms {
        Terms::Full => {
            let f = future_parts(&p, hp, cfg)?;
            let m: Vec<f64> = f.path_mean.iter().zip(&f.score_mean).map(|(a, b)| a + b).collect();
            let l: Vec<f64> = f.path_ls.iter().zip(&f.score_ls).map(|(a, b)| a + b).collect();
            (f.value, m, l)
        }
        Terms::PastOnly => (0.0, vec![0.0; n], vec![0.0; d]),
    };
    let (past_mean, past_ls) = match replay_env {
        Some((dy, tr)) => replay_cotangents(dy, tr, &p, hp, cfg, scfg.n_replays, scfg.credit, rng)?,
        None => (vec![0.0; n], vec![0.0; d]),
    };
    let pen_scfg = match terms {
        Terms::Full => scfg.clone(),
        Terms::PastOnly => SurrogateConfig { lambda: 0.0, ..scfg.clone() },
    };
    let pen = penalty_parts(p.latest, &p.means, &p.inv_var, cfg, &pen_scfg, warm)?;
    let eval = evaluation(fut_val, past, &pen, cfg);

    let grad = if decompose {
        Gradient {
            future: hp.pullback(&p.means, &fut_mean, &fut_ls),
            past: hp.pullback(&p.means, &past_mean, &past_ls),
            penalty: hp.pullback(&p.means, &pen.mean_cot, &pen.ls_cot),
        }
    } else {
        for i in 0..n {
            fut_mean[i] += past_mean[i] + pen.mean_cot[i];
        }
        for k in 0..d {
            fut_ls[k] += past_ls[k] + pen.ls_cot[k];
        }
        let total = hp.pullback(&p.means, &fut_mean, &fut_ls);
        let z = vec![0.0; total.len()];
        Gradient { future: total, past: z.clone(), penalty: z }
    };
    Ok(Step { eval, grad, bound: pen.bound, clipped: pen.clipped })
}

/// RMSprop for ascent: `acc <- 0.9 acc + 0.1 g^2`, `rho <- rho + lr g / sqrt(acc + eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    acc: Vec<f64>,
}

impl RmsProp {
    pub fn new(n: usize) -> Self {
        Self { lr: 1e-3, decay: 0.9, eps: 1e-10, acc: vec![0.0; n] }
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.acc
    }

    /// Updates `rho` in place. A non-finite gradient leaves both `rho` and the state untouched.
    pub fn step(&mut self, rho: &mut [f64], grad: &[f64]) -> Result<()> {
        if rho.len() != self.acc.len() || grad.len() != self.acc.len() {
            return Err(Error::Config("optimizer shape mismatch".into()));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Domain("non-finite gradient; step rejected".into()));
        }
        for i in 0..rho.len() {
            let g = grad[i];
            self.acc[i] = self.decay * self.acc[i] + (1.0 - self.decay) * g * g;
            rho[i] += self.lr * g / math::sqrt(self.acc[i] + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmsprop_examples() {
        let mut opt = RmsProp::new(2);
        let mut rho = vec![1.0, -2.0];
        opt.step(&mut rho, &[0.0, 0.0]).unwrap();
        assert_eq!(rho, vec![1.0, -2.0]);
        let mut opt = RmsProp::new(1);
        let mut rho = vec![0.0];
        let mut prev = 0.0;
        for _ in 0..200 {
            opt.step(&mut rho, &[3.0]).unwrap();
            let step = rho[0] - prev;
            prev = rho[0];
            if opt.accumulator()[0] > 8.99 {
                assert!((step - 1e-3).abs() < 1e-5);
            }
        }
        assert!(opt.step(&mut rho, &[f64::NAN]).is_err());
        assert_eq!(rho[0], prev);
    }

    #[test]
    fn lambda_link() {
        let l = SurrogateConfig::lambda_for_confidence(0.5, 1.0).unwrap();
        assert!((l - 2f64.sqrt()).abs() < 1e-15);
    }
}
