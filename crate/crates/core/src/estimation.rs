//! Multiple importance sampling estimators over the rolling history.
//!
//! With `T` the latest recorded time, the window holds `t = T-a+1 ..= T` and
//! future times are `s = T+1 ..= T+b`. Weights:
//! * past mixture `omega^(T-t)`,
//! * future discount `gamma^(s-T-1)`,
//! * past-return discount `gamma^(t-T+a-1)`.
//!
//! Every density ratio is formed in log space and exponentiated last.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyper_policy::{GaussianHyperPolicy, MeanEval};
use crate::math;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: u64,
    pub theta: Vec<f64>,
    pub reward: f64,
    /// `x^u_t`.
    pub exogenous: Vec<f64>,
    /// `x^c_t`, observed before acting.
    pub controllable: Vec<f64>,
}

/// Rolling buffer of consecutive records.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    capacity: usize,
    records: Vec<Record>,
}

impl History {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), records: Vec::new() }
    }

    pub fn from_records(capacity: usize, records: Vec<Record>) -> Result<Self> {
        let mut h = Self::new(capacity);
        for r in records {
            h.push(r)?;
        }
        Ok(h)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, rec: Record) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.t != last.t + 1 {
                return Err(Error::History(format!("record at t={} does not follow t={}", rec.t, last.t)));
            }
            if rec.theta.len() != last.theta.len() {
                return Err(Error::History("theta dimension changed".into()));
            }
        }
        if !rec.reward.is_finite() || rec.theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("record at t={} is not finite", rec.t)));
        }
        self.records.push(rec);
        if self.records.len() >= 2 * self.capacity {
            let excess = self.records.len() - self.capacity;
            self.records.drain(..excess);
        }
        Ok(())
    }

    /// Records currently retained, oldest first (at least the last `capacity` ones).
    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len().min(self.capacity)
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn latest_time(&self) -> Option<u64> {
        self.records.last().map(|r| r.t)
    }

    pub fn get(&self, t: u64) -> Option<&Record> {
        let first = self.records.first()?.t;
        self.records.get(t.checked_sub(first)? as usize)
    }

    /// The last `alpha` records.
    pub fn window(&self, alpha: usize) -> Result<&[Record]> {
        if alpha == 0 || alpha > self.capacity || alpha > self.records.len() {
            return Err(Error::History(format!(
                "window of {alpha} requested, {} records available (capacity {})",
                self.records.len().min(self.capacity),
                self.capacity
            )));
        }
        Ok(&self.records[self.records.len() - alpha..])
    }

    /// Immutable copy of the last `alpha` records.
    pub fn snapshot(&self, alpha: usize) -> Result<History> {
        Ok(History { capacity: alpha, records: self.window(alpha)?.to_vec() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub alpha: usize,
    pub beta: usize,
    pub gamma: f64,
    pub omega: f64,
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 1 || self.beta < 1 {
            return Err(Error::Config("alpha and beta must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::Config("gamma and omega must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// `omega^(T-t)` for `t = T-a+1 ..= T`, oldest first.
    pub fn past_weights(&self) -> Vec<f64> {
        (0..self.alpha).map(|i| math::powi(self.omega, (self.alpha - 1 - i) as u64)).collect()
    }

    /// `gamma^(s-T-1)` for `s = T+1 ..= T+b`.
    pub fn future_discounts(&self) -> Vec<f64> {
        (0..self.beta).map(|j| math::powi(self.gamma, j as u64)).collect()
    }

    /// `gamma^(t-T+a-1)` for `t = T-a+1 ..= T`, oldest first.
    pub fn past_discounts(&self) -> Vec<f64> {
        (0..self.alpha).map(|i| math::powi(self.gamma, i as u64)).collect()
    }
}

/// `(1 - omega^a)/(1 - omega)`, or `a` when `omega = 1`.
pub fn c_omega(omega: f64, alpha: usize) -> f64 {
    math::geometric_sum(omega, alpha as f64)
}

/// `(1 - gamma^x)/(1 - gamma)`, or `x` when `gamma = 1`.
pub fn c_gamma(gamma: f64, xi: usize) -> f64 {
    math::geometric_sum(gamma, xi as f64)
}

fn ln_or_neg_inf(x: f64) -> f64 {
    if x > 0.0 {
        math::ln(x)
    } else {
        f64::NEG_INFINITY
    }
}

/// Log-densities of every window sample under every past and future component.
#[derive(Debug, Clone)]
pub struct ImportanceTable {
    pub first: u64,
    pub latest: u64,
    pub alpha: usize,
    pub beta: usize,
    /// `log nu(theta_t | k)`, row `t`, column `k`, both over the window.
    pub log_nu_past: Vec<f64>,
    /// `log nu(theta_t | s)`, row `t`, column `s` over the future times.
    pub log_nu_future: Vec<f64>,
    /// `log omega^(T-k)`.
    pub log_past_w: Vec<f64>,
    /// `log gamma^(s-T-1)`.
    pub log_future_g: Vec<f64>,
    /// `log sum_k omega^(T-k) nu(theta_t | k)`.
    pub log_den: Vec<f64>,
}

impl ImportanceTable {
    /// `means` must cover `T-a+1 ..= T+b`.
    pub fn build(window: &[Record], hp: &GaussianHyperPolicy, means: &MeanEval, cfg: &EstimatorConfig) -> Result<Self> {
        let alpha = window.len();
        let beta = cfg.beta;
        let first = window[0].t;
        let latest = first + alpha as u64 - 1;
        let iv = hp.inv_var();
        let ln_norm = hp.log_normalizer();
        let log_past_w: Vec<f64> = cfg.past_weights().into_iter().map(ln_or_neg_inf).collect();
        let log_future_g: Vec<f64> = cfg.future_discounts().into_iter().map(ln_or_neg_inf).collect();
        let mut log_nu_past = vec![0.0; alpha * alpha];
        let mut log_nu_future = vec![0.0; alpha * beta];
        let mut log_den = vec![0.0; alpha];
        let mut buf = vec![0.0; alpha];
        for (i, rec) in window.iter().enumerate() {
            for k in 0..alpha {
                let l = GaussianHyperPolicy::log_density_at(&rec.theta, means.at(first + k as u64), &iv, ln_norm);
                log_nu_past[i * alpha + k] = l;
                buf[k] = l + log_past_w[k];
            }
            for j in 0..beta {
                log_nu_future[i * beta + j] =
                    GaussianHyperPolicy::log_density_at(&rec.theta, means.at(latest + 1 + j as u64), &iv, ln_norm);
            }
            let d = math::log_sum_exp(&buf);
            if !(d >= math::LOG_UNDERFLOW) {
                return Err(Error::Degenerate { t: rec.t });
            }
            log_den[i] = d;
        }
        Ok(Self { first, latest, alpha, beta, log_nu_past, log_nu_future, log_past_w, log_future_g, log_den })
    }

    /// `log sum_s gamma^(s-T-1) nu(theta_t | s)` for window row `i`.
    pub fn log_future_mix(&self, i: usize) -> f64 {
        let row = &self.log_nu_future[i * self.beta..(i + 1) * self.beta];
        math::log_sum_exp_iter(row.iter().zip(&self.log_future_g).map(|(a, b)| a + b))
    }

    /// Combined future ratio `sum_s g_s nu(theta_t|s) / den_t` per row.
    pub fn future_ratios(&self) -> Vec<f64> {
        (0..self.alpha).map(|i| math::exp(self.log_future_mix(i) - self.log_den[i])).collect()
    }
}

fn check_window<'a>(h: &'a History, hp: &GaussianHyperPolicy, cfg: &EstimatorConfig) -> Result<&'a [Record]> {
    cfg.validate()?;
    let w = h.window(cfg.alpha)?;
    if w[0].theta.len() != hp.dim() {
        return Err(Error::Config("history theta dimension does not match the hyper-policy".into()));
    }
    Ok(w)
}

fn table(h: &History, hp: &GaussianHyperPolicy, cfg: &EstimatorConfig) -> Result<(ImportanceTable, Vec<f64>)> {
    let w = check_window(h, hp, cfg)?;
    let first = w[0].t;
    let latest = first + cfg.alpha as u64 - 1;
    let means = hp.means(first, latest + cfg.beta as u64, false);
    let tab = ImportanceTable::build(w, hp, &means, cfg)?;
    Ok((tab, w.iter().map(|r| r.reward).collect()))
}

/// Balance-heuristic estimate of the reward at future time `s`.
pub fn step_ahead_reward(h: &History, hp: &GaussianHyperPolicy, cfg: &EstimatorConfig, s: u64) -> Result<f64> {
    let (tab, r) = table(h, hp, cfg)?;
    if s <= tab.latest || s > tab.latest + cfg.beta as u64 {
        return Err(Error::Range { requested: s, available_from: tab.latest + 1, available_to: tab.latest + cfg.beta as u64 });
    }
    let j = (s - tab.latest - 1) as usize;
    Ok((0..tab.alpha)
        .map(|i| math::exp(tab.log_past_w[i] + tab.log_nu_future[i * tab.beta + j] - tab.log_den[i]) * r[i])
        .sum())
}

/// Future return via the single-pass form.
pub fn future_return(h: &History, hp: &GaussianHyperPolicy, cfg: &EstimatorConfig) -> Result<f64> {
    let (tab, r) = table(h, hp, cfg)?;
    Ok(future_return_from_table(&tab, &r))
}

pub fn future_return_from_table(tab: &ImportanceTable, rewards: &[f64]) -> f64 {
    (0..tab.alpha)
        .map(|i| math::exp(tab.log_past_w[i] + tab.log_future_mix(i) - tab.log_den[i]) * rewards[i])
        .sum()
}

/// Future return as the discounted sum of the per-step estimates.
pub fn future_return_by_steps(h: &History, hp: &GaussianHyperPolicy, cfg: &EstimatorConfig) -> Result<f64> {
    let (tab, r) = table(h, hp, cfg)?;
    let mut total = 0.0;
    for j in 0..tab.beta {
        let rs: f64 = (0..tab.alpha)
            .map(|i| math::exp(tab.log_past_w[i] + tab.log_nu_future[i * tab.beta + j] - tab.log_den[i]) * r[i])
            .sum();
        total += math::exp(tab.log_future_g[j]) * rs;
    }
    Ok(total)
}

/// `(1/C_omega) sum omega^(T-t) gamma^(t-T+a-1) r_t`.
pub fn past_return(h: &History, cfg: &EstimatorConfig) -> Result<f64> {
    cfg.validate()?;
    let w = h.window(cfg.alpha)?;
    Ok(past_return_from(w.iter().map(|r| r.reward), cfg))
}

pub fn past_return_from<I: Iterator<Item = f64>>(rewards: I, cfg: &EstimatorConfig) -> f64 {
    let pw = cfg.past_weights();
    let pd = cfg.past_discounts();
    let s: f64 = rewards.zip(pw.iter().zip(&pd)).map(|(r, (w, d))| w * d * r).sum();
    s / c_omega(cfg.omega, cfg.alpha)
}

pub fn combined_objective(h: &History, hp: &GaussianHyperPolicy, cfg: &EstimatorConfig) -> Result<f64> {
    Ok(future_return(h, hp, cfg)? + past_return(h, cfg)?)
}

/// Geometric-weight average age `sum j omega^j / sum omega^j` over `j < a`.
fn mean_age(omega: f64, alpha: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut w = 1.0;
    for j in 0..alpha {
        num += j as f64 * w;
        den += w;
        w *= omega;
    }
    num / den
}

fn bias_checks(l_m: f64, l_nu: f64, r_max: f64, cfg: &EstimatorConfig) -> Result<()> {
    cfg.validate()?;
    if !(l_m >= 0.0 && l_nu >= 0.0 && r_max >= 0.0) {
        return Err(Error::Domain("Lipschitz constants and reward bound must be nonnegative".into()));
    }
    if cfg.gamma >= 1.0 {
        return Err(Error::Undefined("the bias bound needs gamma < 1".into()));
    }
    Ok(())
}

/// `(L_M + 2 R L_nu) C_gamma(b) (omega/(1-omega) + 1/(1-gamma))`, valid for `omega < 1`.
pub fn bias_bound(l_m: f64, l_nu: f64, r_max: f64, cfg: &EstimatorConfig) -> Result<f64> {
    bias_checks(l_m, l_nu, r_max, cfg)?;
    if cfg.omega >= 1.0 {
        return Err(Error::Undefined("the loose bias bound needs omega < 1; use the tight form".into()));
    }
    let pre = (l_m + 2.0 * r_max * l_nu) * c_gamma(cfg.gamma, cfg.beta);
    Ok(pre * (cfg.omega / (1.0 - cfg.omega) + 1.0 / (1.0 - cfg.gamma)))
}

/// Tight form with the exact weighted age of the window; at `omega = 1` the age term is `(a-1)/2`.
pub fn bias_bound_tight(l_m: f64, l_nu: f64, r_max: f64, cfg: &EstimatorConfig) -> Result<f64> {
    bias_checks(l_m, l_nu, r_max, cfg)?;
    let pre = (l_m + 2.0 * r_max * l_nu) * c_gamma(cfg.gamma, cfg.beta);
    Ok(pre * (mean_age(cfg.omega, cfg.alpha) + 1.0 / (1.0 - cfg.gamma)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyper_policy::MeanFunction;

    fn rec(t: u64, theta: f64, r: f64) -> Record {
        Record { t, theta: vec![theta], reward: r, exogenous: vec![0.0], controllable: vec![] }
    }

    #[test]
    fn normalizers() {
        assert_eq!(c_omega(1.0, 500), 500.0);
        assert!((c_omega(0.5, 3) - 1.75).abs() < 1e-15);
        assert_eq!(c_omega(0.3, 1), 1.0);
        assert_eq!(c_gamma(1.0, 50), 50.0);
        assert!((c_gamma(0.9, 2) - 1.9).abs() < 1e-15);
        assert_eq!(c_gamma(0.2, 1), 1.0);
    }

    #[test]
    fn history_rejects_gaps() {
        let mut h = History::new(4);
        h.push(rec(3, 0.0, 1.0)).unwrap();
        assert!(matches!(h.push(rec(5, 0.0, 1.0)), Err(Error::History(_))));
        assert!(h.window(2).is_err());
        for t in 4..20 {
            h.push(rec(t, 0.0, t as f64)).unwrap();
        }
        let w = h.window(4).unwrap();
        assert_eq!(w.iter().map(|r| r.t).collect::<Vec<_>>(), vec![16, 17, 18, 19]);
    }

    #[test]
    fn past_return_examples() {
        let h = History::from_records(2, vec![rec(0, 0.0, 1.0), rec(1, 0.0, 2.0)]).unwrap();
        let cfg = EstimatorConfig { alpha: 2, beta: 1, gamma: 1.0, omega: 0.5 };
        assert!((past_return(&h, &cfg).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        let cfg = EstimatorConfig { omega: 1.0, ..cfg };
        assert!((past_return(&h, &cfg).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn scripted_two_sample_example() {
        // means 0, 1, 2 at t = 0, 1, 2; unit sigma; theta = (0, 1); r = (1, 2)
        let hp = GaussianHyperPolicy::new(MeanFunction::stationary(1), vec![0.0], vec![0.0], false).unwrap();
        let h = History::from_records(2, vec![rec(0, 0.0, 1.0), rec(1, 1.0, 2.0)]).unwrap();
        let cfg = EstimatorConfig { alpha: 2, beta: 1, gamma: 1.0, omega: 1.0 };
        let means = MeanEval::from_values(0, 1, vec![0.0, 1.0, 2.0]);
        let tab = ImportanceTable::build(h.window(2).unwrap(), &hp, &means, &cfg).unwrap();
        let v = future_return_from_table(&tab, &[1.0, 2.0]);
        let e = |x: f64| x.exp();
        let expect = e(-2.0) / (1.0 + e(-0.5)) * 1.0 + e(-0.5) / (e(-0.5) + 1.0) * 2.0;
        assert!((v - expect).abs() < 1e-14, "{v} vs {expect}");
        assert!((v - 0.839_322_047_487_766_4).abs() < 1e-12);
    }

    #[test]
    fn stationary_collapse() {
        let hp = GaussianHyperPolicy::new(MeanFunction::stationary(1), vec![0.2], vec![0.0], false).unwrap();
        let recs: Vec<Record> = (0..6).map(|t| rec(t, 0.1 * t as f64, t as f64)).collect();
        let h = History::from_records(6, recs).unwrap();
        let cfg = EstimatorConfig { alpha: 6, beta: 3, gamma: 1.0, omega: 0.7 };
        let weighted = past_return_from(h.window(6).unwrap().iter().map(|r| r.reward), &cfg);
        for s in 6..9 {
            assert!((step_ahead_reward(&h, &hp, &cfg, s).unwrap() - weighted).abs() < 1e-12);
        }
        let j = future_return(&h, &hp, &cfg).unwrap();
        assert!((j - 3.0 * weighted).abs() < 1e-12);
        assert!((future_return_by_steps(&h, &hp, &cfg).unwrap() - j).abs() < 1e-12);
    }

    #[test]
    fn single_sample_window() {
        let hp = GaussianHyperPolicy::new(MeanFunction::sinusoid(1), vec![1.0, 0.3, 0.0, 0.0], vec![0.2], false).unwrap();
        let h = History::from_records(1, vec![rec(10, 0.4, 3.0)]).unwrap();
        let cfg = EstimatorConfig { alpha: 1, beta: 2, gamma: 1.0, omega: 1.0 };
        let expect = (hp.log_density(&[0.4], 12).unwrap() - hp.log_density(&[0.4], 10).unwrap()).exp() * 3.0;
        assert!((step_ahead_reward(&h, &hp, &cfg, 12).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn degenerate_denominator() {
        let hp = GaussianHyperPolicy::new(MeanFunction::stationary(1), vec![0.0], vec![-3.0], false).unwrap();
        let h = History::from_records(1, vec![rec(0, 100.0, 1.0)]).unwrap();
        let cfg = EstimatorConfig { alpha: 1, beta: 1, gamma: 1.0, omega: 1.0 };
        assert_eq!(future_return(&h, &hp, &cfg), Err(Error::Degenerate { t: 0 }));
    }

    #[test]
    fn bias_examples() {
        let cfg = EstimatorConfig { alpha: 3, beta: 2, gamma: 0.9, omega: 1.0 };
        assert!((bias_bound_tight(1.0, 0.0, 1.0, &cfg).unwrap() - 20.9).abs() < 1e-12);
        assert!(matches!(bias_bound(1.0, 0.0, 1.0, &cfg), Err(Error::Undefined(_))));
        let cfg = EstimatorConfig { omega: 0.5, ..cfg };
        assert_eq!(bias_bound(0.0, 0.0, 1.0, &cfg).unwrap(), 0.0);
        let cfg = EstimatorConfig { gamma: 1.0, ..cfg };
        assert!(matches!(bias_bound_tight(1.0, 0.0, 1.0, &cfg), Err(Error::Undefined(_))));
    }

    #[test]
    fn tight_matches_closed_form() {
        for &(w, a) in &[(0.3f64, 5usize), (0.9, 40), (0.99, 7)] {
            let closed = w * (1.0 - a as f64 * w.powi(a as i32 - 1) + (a as f64 - 1.0) * w.powi(a as i32))
                / ((1.0 - w) * (1.0 - w.powi(a as i32)));
            assert!((mean_age(w, a) - closed).abs() < 1e-10 * (1.0 + closed));
        }
    }
}
