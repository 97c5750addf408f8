//! Upper bounds on the exponentiated Renyi divergence between the future
//! mixture `Psi = sum_i zeta_i P_i` and the past mixture `Phi = sum_j mu_j Q_j`.
//!
//! All bounds work from the matrix of pairwise log-divergences
//! `log d_a(P_i || Q_j)` and return `log V` on the `d_a` scale together with
//! its gradient with respect to every `log d_a(P_i || Q_j)`.
//!
//! For variational parameters `psi, phi` (columns of `psi` sum to `mu_j`,
//! rows of `phi` to `zeta_i`):
//! `V^(a-1) = sum_ij phi_ij^a psi_ij^(1-a) d_ij^(a-1)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{c_gamma, c_omega, EstimatorConfig};
use crate::hyper_policy::{GaussianHyperPolicy, MeanEval, LOG_DIVERGENCE_CAP};
use crate::math::{self, log_sum_exp, softmax_in_place};

/// Per-pair gradient magnitude cap for saturated divergences.
pub const SATURATED_GRAD_CAP: f64 = 1e6;
pub const DEFAULT_DIRECT_ITERS: usize = 20;

fn ln0(x: f64) -> f64 {
    if x > 0.0 {
        math::ln(x)
    } else {
        f64::NEG_INFINITY
    }
}

/// Component times and weights of the future and past mixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub future_times: Vec<u64>,
    pub zeta: Vec<f64>,
    pub past_times: Vec<u64>,
    pub mu: Vec<f64>,
}

impl MixtureSpec {
    /// Future `T+1 ..= T+b` weighted `gamma^(s-T-1)/C_gamma(b)`, past
    /// `T-a+1 ..= T` weighted `omega^(T-t)/C_omega`.
    pub fn from_config(latest: u64, cfg: &EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        if latest + 1 < cfg.alpha as u64 {
            return Err(Error::Config("window starts before time 0".into()));
        }
        let cg = c_gamma(cfg.gamma, cfg.beta);
        let co = c_omega(cfg.omega, cfg.alpha);
        let s = Self {
            future_times: (1..=cfg.beta as u64).map(|j| latest + j).collect(),
            zeta: cfg.future_discounts().into_iter().map(|g| g / cg).collect(),
            past_times: (0..cfg.alpha as u64).map(|i| latest + 1 - cfg.alpha as u64 + i).collect(),
            mu: cfg.past_weights().into_iter().map(|w| w / co).collect(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.future_times.len() != self.zeta.len() || self.past_times.len() != self.mu.len() {
            return Err(Error::Config("mixture times and weights differ in length".into()));
        }
        if self.zeta.is_empty() || self.mu.is_empty() {
            return Err(Error::Config("mixtures must be nonempty".into()));
        }
        for (name, w) in [("future", &self.zeta), ("past", &self.mu)] {
            if w.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::Config(format!("{name} weights must be nonnegative")));
            }
            let s: f64 = w.iter().sum();
            if libm::fabs(s - 1.0) > 1e-12 {
                return Err(Error::Config(format!("{name} weights sum to {s}")));
            }
        }
        Ok(())
    }
}

/// Pairwise log-divergences between mixture components, row `i` future, column `j` past.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDivergences {
    order: f64,
    rows: usize,
    cols: usize,
    log_zeta: Vec<f64>,
    log_mu: Vec<f64>,
    log_d: Vec<f64>,
    saturated: Vec<bool>,
}

impl MixtureDivergences {
    /// From an explicit matrix of `log d_a` values; entries above 700 are capped and flagged.
    pub fn from_log_matrix(order: f64, zeta: &[f64], mu: &[f64], log_d: Vec<f64>) -> Result<Self> {
        if !(order > 1.0) {
            return Err(Error::Domain(format!("divergence order must exceed 1, got {order}")));
        }
        if log_d.len() != zeta.len() * mu.len() {
            return Err(Error::Config("divergence matrix shape does not match the weights".into()));
        }
        if log_d.iter().any(|x| x.is_nan() || *x < -1e-12) {
            return Err(Error::Domain("pairwise log-divergences must be nonnegative".into()));
        }
        let saturated: Vec<bool> = log_d.iter().map(|&x| x > LOG_DIVERGENCE_CAP).collect();
        let log_d = log_d.into_iter().map(|x| x.clamp(0.0, LOG_DIVERGENCE_CAP)).collect();
        Ok(Self {
            order,
            rows: zeta.len(),
            cols: mu.len(),
            log_zeta: zeta.iter().map(|&z| ln0(z)).collect(),
            log_mu: mu.iter().map(|&m| ln0(m)).collect(),
            log_d,
            saturated,
        })
    }

    /// Components `N(mean, diag(1/inv_var))` with means read from `means`.
    pub fn from_means(order: f64, spec: &MixtureSpec, means: &MeanEval, inv_var: &[f64]) -> Result<Self> {
        spec.validate()?;
        let mut log_d = Vec::with_capacity(spec.future_times.len() * spec.past_times.len());
        for &s in &spec.future_times {
            let ms = means.at(s);
            for &t in &spec.past_times {
                log_d.push(crate::hyper_policy::log_renyi_between(order, ms, means.at(t), inv_var));
            }
        }
        Self::from_log_matrix(order, &spec.zeta, &spec.mu, log_d)
    }

    pub fn from_hyper_policy(order: f64, spec: &MixtureSpec, hp: &GaussianHyperPolicy) -> Result<Self> {
        let lo = spec.past_times.iter().chain(&spec.future_times).copied().min().unwrap_or(0);
        let hi = spec.past_times.iter().chain(&spec.future_times).copied().max().unwrap_or(0);
        let means = hp.means(lo, hi, false);
        Self::from_means(order, spec, &means, &hp.inv_var())
    }

    /// One-dimensional Gaussian components with shared standard deviation.
    pub fn gaussian_1d(order: f64, zeta: &[f64], p_means: &[f64], mu: &[f64], q_means: &[f64], sigma: f64) -> Result<Self> {
        let iv = [1.0 / (sigma * sigma)];
        let mut log_d = Vec::with_capacity(p_means.len() * q_means.len());
        for &a in p_means {
            for &b in q_means {
                log_d.push(crate::hyper_policy::log_renyi_between(order, &[a], &[b], &iv));
            }
        }
        Self::from_log_matrix(order, zeta, mu, log_d)
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn log_d(&self) -> &[f64] {
        &self.log_d
    }

    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|&s| s)
    }

    pub fn is_saturated(&self, i: usize, j: usize) -> bool {
        self.saturated[i * self.cols + j]
    }

    pub fn zeta(&self) -> Vec<f64> {
        self.log_zeta.iter().map(|&l| math::exp(l)).collect()
    }

    pub fn mu(&self) -> Vec<f64> {
        self.log_mu.iter().map(|&l| math::exp(l)).collect()
    }

    /// Pairwise `d_a` values.
    pub fn matrix(&self) -> Vec<f64> {
        self.log_d.iter().map(|&l| math::exp(l)).collect()
    }

    #[inline]
    fn ld(&self, i: usize, j: usize) -> f64 {
        self.log_d[i * self.cols + j]
    }

    /// `log S_i = log sum_j mu_j / d_ij`.
    fn log_s(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|i| math::log_sum_exp_iter((0..self.cols).map(|j| self.log_mu[j] - self.ld(i, j))))
            .collect()
    }

    /// `log G_j = log sum_i zeta_i d_ij^((a-1)/a)`.
    fn log_g(&self) -> Vec<f64> {
        let e = (self.order - 1.0) / self.order;
        (0..self.cols)
            .map(|j| math::log_sum_exp_iter((0..self.rows).map(|i| self.log_zeta[i] + e * self.ld(i, j))))
            .collect()
    }

    /// `pi_ij = mu_j/d_ij / S_i`.
    fn pi(&self, log_s: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                p[i * self.cols + j] = math::exp(self.log_mu[j] - self.ld(i, j) - log_s[i]);
            }
        }
        p
    }

    /// `kappa_ij = zeta_i d_ij^((a-1)/a) / G_j`.
    fn kappa(&self, log_g: &[f64]) -> Vec<f64> {
        let e = (self.order - 1.0) / self.order;
        let mut k = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                k[i * self.cols + j] = math::exp(self.log_zeta[i] + e * self.ld(i, j) - log_g[j]);
            }
        }
        k
    }
}

/// Exponentiated Renyi-2 divergences between every future and past component.
pub fn pairwise_d2(spec: &MixtureSpec, hp: &GaussianHyperPolicy) -> Result<MixtureDivergences> {
    MixtureDivergences::from_hyper_policy(2.0, spec, hp)
}

/// Feasible pair `(psi, phi)`, both stored row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParams {
    pub rows: usize,
    pub cols: usize,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
}

impl VariationalParams {
    /// `psi_ij = mu_j / L`, `phi_ij = zeta_i / K`.
    pub fn uniform(div: &MixtureDivergences) -> Self {
        let (l, k) = div.shape();
        let (zeta, mu) = (div.zeta(), div.mu());
        let mut psi = vec![0.0; l * k];
        let mut phi = vec![0.0; l * k];
        for i in 0..l {
            for j in 0..k {
                psi[i * k + j] = mu[j] / l as f64;
                phi[i * k + j] = zeta[i] / k as f64;
            }
        }
        Self { rows: l, cols: k, psi, phi }
    }

    /// Same couplings, with psi columns and phi rows rescaled to the marginals of `div`.
    /// `None` on a shape mismatch or an empty column or row.
    pub fn rescaled(&self, div: &MixtureDivergences) -> Option<Self> {
        let (l, k) = div.shape();
        if (self.rows, self.cols) != (l, k) {
            return None;
        }
        let (zeta, mu) = (div.zeta(), div.mu());
        let mut out = self.clone();
        for j in 0..k {
            let s: f64 = (0..l).map(|i| self.psi[i * k + j]).sum();
            if !(s > 0.0) {
                return None;
            }
            for i in 0..l {
                out.psi[i * k + j] *= mu[j] / s;
            }
        }
        for i in 0..l {
            let s: f64 = self.phi[i * k..(i + 1) * k].iter().sum();
            if !(s > 0.0) {
                return None;
            }
            for x in &mut out.phi[i * k..(i + 1) * k] {
                *x *= zeta[i] / s;
            }
        }
        Some(out)
    }

    pub fn validate(&self, div: &MixtureDivergences) -> Result<()> {
        let (l, k) = div.shape();
        if self.rows != l || self.cols != k || self.psi.len() != l * k || self.phi.len() != l * k {
            return Err(Error::Constraint("variational parameter shape mismatch".into()));
        }
        if self.psi.iter().chain(&self.phi).any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Constraint("variational parameters must be finite and nonnegative".into()));
        }
        let (zeta, mu) = (div.zeta(), div.mu());
        for j in 0..k {
            let s: f64 = (0..l).map(|i| self.psi[i * k + j]).sum();
            if libm::fabs(s - mu[j]) > 1e-10 {
                return Err(Error::Constraint(format!("psi column {j} sums to {s}, expected {}", mu[j])));
            }
        }
        for i in 0..l {
            let s: f64 = self.phi[i * k..(i + 1) * k].iter().sum();
            if libm::fabs(s - zeta[i]) > 1e-10 {
                return Err(Error::Constraint(format!("phi row {i} sums to {s}, expected {}", zeta[i])));
            }
        }
        Ok(())
    }
}

/// A bound on `d_a(Psi || Phi)` with its sensitivity to the pairwise divergences.
#[derive(Debug, Clone, PartialEq)]
pub struct Bound {
    /// `log V`.
    pub log_value: f64,
    /// `d log V / d log d_ij`, row-major.
    pub grad_log_d: Vec<f64>,
    pub saturated: bool,
    /// Parameters the value was computed at, for the variational and direct variants.
    pub params: Option<VariationalParams>,
    /// Set when a closed-form update had to fall back to uniform weights.
    pub fallback: bool,
}

impl Bound {
    pub fn value(&self) -> f64 {
        math::exp(self.log_value)
    }
}

fn variational_terms(div: &MixtureDivergences, vp: &VariationalParams) -> Vec<f64> {
    let a = div.order;
    let mut terms = vec![f64::NEG_INFINITY; vp.psi.len()];
    for (n, term) in terms.iter_mut().enumerate() {
        let (ph, ps) = (vp.phi[n], vp.psi[n]);
        if ph > 0.0 {
            *term = if ps > 0.0 { a * ln0(ph) + (1.0 - a) * ln0(ps) + (a - 1.0) * div.log_d[n] } else { f64::INFINITY };
        }
    }
    terms
}

/// Bound at given variational parameters.
pub fn bound_variational(div: &MixtureDivergences, vp: &VariationalParams) -> Result<Bound> {
    vp.validate(div)?;
    Ok(variational_unchecked(div, vp, false))
}

fn variational_unchecked(div: &MixtureDivergences, vp: &VariationalParams, fallback: bool) -> Bound {
    let mut terms = variational_terms(div, vp);
    let lse = log_sum_exp(&terms);
    let log_value = lse / (div.order - 1.0);
    if lse.is_finite() {
        softmax_in_place(&mut terms);
    } else {
        terms.iter_mut().for_each(|t| *t = 0.0);
    }
    Bound { log_value, grad_log_d: terms, saturated: div.any_saturated(), params: Some(vp.clone()), fallback }
}

/// Optimal `psi` for fixed `phi`: `psi_ij = mu_j phi_ij e_ij / sum_l phi_lj e_lj`, `e = d^((a-1)/a)`.
/// Returns the matrix and whether a column fell back to uniform weights.
pub fn optimal_psi_given_phi(div: &MixtureDivergences, phi: &[f64]) -> (Vec<f64>, bool) {
    let (l, k) = div.shape();
    let e = (div.order - 1.0) / div.order;
    let mu = div.mu();
    let mut psi = vec![0.0; l * k];
    let mut fallback = false;
    let mut col = vec![0.0; l];
    for j in 0..k {
        for i in 0..l {
            col[i] = ln0(phi[i * k + j]) + e * div.ld(i, j);
        }
        let z = log_sum_exp(&col);
        if z == f64::NEG_INFINITY {
            fallback = true;
            for i in 0..l {
                psi[i * k + j] = mu[j] / l as f64;
            }
            continue;
        }
        for i in 0..l {
            psi[i * k + j] = mu[j] * math::exp(col[i] - z);
        }
    }
    (psi, fallback)
}

/// Optimal `phi` for fixed `psi`: `phi_ij = zeta_i (psi_ij/d_ij) / sum_k psi_ik/d_ik`.
pub fn optimal_phi_given_psi(div: &MixtureDivergences, psi: &[f64]) -> (Vec<f64>, bool) {
    let (l, k) = div.shape();
    let zeta = div.zeta();
    let mut phi = vec![0.0; l * k];
    let mut fallback = false;
    let mut row = vec![0.0; k];
    for i in 0..l {
        for j in 0..k {
            row[j] = ln0(psi[i * k + j]) - div.ld(i, j);
        }
        let z = log_sum_exp(&row);
        if z == f64::NEG_INFINITY {
            fallback = true;
            for j in 0..k {
                phi[i * k + j] = zeta[i] / k as f64;
            }
            continue;
        }
        for j in 0..k {
            phi[i * k + j] = zeta[i] * math::exp(row[j] - z);
        }
    }
    (phi, fallback)
}

/// Alternating closed-form minimization of the variational bound, `phi` step first.
/// Starts from `warm_start` when given, otherwise from uniform parameters.
pub fn bound_direct_opt(div: &MixtureDivergences, warm_start: Option<&VariationalParams>, iters: usize) -> Result<Bound> {
    if iters == 0 {
        return Err(Error::Config("direct optimization needs at least one iteration".into()));
    }
    let mut vp = match warm_start {
        Some(w) => {
            w.validate(div)?;
            w.clone()
        }
        None => VariationalParams::uniform(div),
    };
    let mut fallback = false;
    for _ in 0..iters {
        let (phi, f1) = optimal_phi_given_psi(div, &vp.psi);
        vp.phi = phi;
        let (psi, f2) = optimal_psi_given_phi(div, &vp.phi);
        vp.psi = psi;
        fallback |= f1 | f2;
    }
    Ok(variational_unchecked(div, &vp, fallback))
}

/// `V = (sum_i zeta_i S_i^(-(a-1)/a))^(a/(a-1))` with `S_i = sum_j mu_j / d_ij`.
pub fn bound_two_steps_psi_first(div: &MixtureDivergences) -> Bound {
    let a = div.order;
    let log_s = div.log_s();
    let mut p: Vec<f64> = (0..div.rows).map(|i| div.log_zeta[i] - (a - 1.0) / a * log_s[i]).collect();
    let log_u = softmax_in_place(&mut p);
    let pi = div.pi(&log_s);
    let mut grad = pi;
    for i in 0..div.rows {
        for g in &mut grad[i * div.cols..(i + 1) * div.cols] {
            *g *= p[i];
        }
    }
    Bound { log_value: a / (a - 1.0) * log_u, grad_log_d: grad, saturated: div.any_saturated(), params: None, fallback: false }
}

/// `V = 1 / sum_j mu_j G_j^(-a/(a-1))` with `G_j = sum_i zeta_i d_ij^((a-1)/a)`.
pub fn bound_two_steps_phi_first(div: &MixtureDivergences) -> Bound {
    let a = div.order;
    let log_g = div.log_g();
    let mut q: Vec<f64> = (0..div.cols).map(|j| div.log_mu[j] - a / (a - 1.0) * log_g[j]).collect();
    let log_v = softmax_in_place(&mut q);
    let mut grad = div.kappa(&log_g);
    for i in 0..div.rows {
        for j in 0..div.cols {
            grad[i * div.cols + j] *= q[j];
        }
    }
    Bound { log_value: -log_v, grad_log_d: grad, saturated: div.any_saturated(), params: None, fallback: false }
}

/// `psi_ij = mu_j / L` with the matching optimal `phi`:
/// `V^(a-1) = sum_i zeta_i^a L^(a-1) S_i^(1-a)`.
pub fn bound_uniform_psi(div: &MixtureDivergences) -> Bound {
    let a = div.order;
    let log_s = div.log_s();
    let ll = math::ln(div.rows as f64);
    let mut r: Vec<f64> = (0..div.rows).map(|i| a * div.log_zeta[i] + (a - 1.0) * ll + (1.0 - a) * log_s[i]).collect();
    let lse = softmax_in_place(&mut r);
    let mut grad = div.pi(&log_s);
    for i in 0..div.rows {
        for g in &mut grad[i * div.cols..(i + 1) * div.cols] {
            *g *= r[i];
        }
    }
    Bound { log_value: lse / (a - 1.0), grad_log_d: grad, saturated: div.any_saturated(), params: None, fallback: false }
}

/// `phi_ij = zeta_i / K` with the matching optimal `psi`:
/// `V^(a-1) = sum_j mu_j^(1-a) K^(-a) G_j^a`.
pub fn bound_uniform_phi(div: &MixtureDivergences) -> Bound {
    let a = div.order;
    let log_g = div.log_g();
    let lk = math::ln(div.cols as f64);
    let mut y: Vec<f64> = (0..div.cols)
        .map(|j| if div.log_mu[j] == f64::NEG_INFINITY { f64::NEG_INFINITY } else { (1.0 - a) * div.log_mu[j] - a * lk + a * log_g[j] })
        .collect();
    let lse = softmax_in_place(&mut y);
    let mut grad = div.kappa(&log_g);
    for i in 0..div.rows {
        for j in 0..div.cols {
            grad[i * div.cols + j] *= y[j];
        }
    }
    Bound { log_value: lse / (a - 1.0), grad_log_d: grad, saturated: div.any_saturated(), params: None, fallback: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    UniformPsi,
    UniformPhi,
    TwoStepsPsiFirst,
    TwoStepsPhiFirst,
    DirectOptReset,
    DirectOptWarm,
}

impl BoundMethod {
    pub const ALL: [BoundMethod; 6] = [
        BoundMethod::UniformPsi,
        BoundMethod::UniformPhi,
        BoundMethod::TwoStepsPsiFirst,
        BoundMethod::TwoStepsPhiFirst,
        BoundMethod::DirectOptReset,
        BoundMethod::DirectOptWarm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundMethod::UniformPsi => "uniform_psi",
            BoundMethod::UniformPhi => "uniform_phi",
            BoundMethod::TwoStepsPsiFirst => "two_steps_psi_first",
            BoundMethod::TwoStepsPhiFirst => "two_steps_phi_first",
            BoundMethod::DirectOptReset => "direct_opt_reset",
            BoundMethod::DirectOptWarm => "direct_opt_warm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|m| m.name() == s)
    }
}

/// Evaluates `method`; `warm` is only read by [`BoundMethod::DirectOptWarm`].
pub fn evaluate(method: BoundMethod, div: &MixtureDivergences, warm: Option<&VariationalParams>, iters: usize) -> Result<Bound> {
    Ok(match method {
        BoundMethod::UniformPsi => bound_uniform_psi(div),
        BoundMethod::UniformPhi => bound_uniform_phi(div),
        BoundMethod::TwoStepsPsiFirst => bound_two_steps_psi_first(div),
        BoundMethod::TwoStepsPhiFirst => bound_two_steps_phi_first(div),
        BoundMethod::DirectOptReset => bound_direct_opt(div, None, iters)?,
        BoundMethod::DirectOptWarm => bound_direct_opt(div, warm, iters)?,
    })
}

/// `B = (sum_s gamma^(s-T-1) (sum_t omega^(T-t)/d_2(s,t))^(-1/2))^2`, recovered from a
/// `d_2`-scale bound as `C_gamma(b)^2 V / C_omega`.
pub fn b_from_bound(bound_value: f64, cfg: &EstimatorConfig) -> f64 {
    let cg = c_gamma(cfg.gamma, cfg.beta);
    cg * cg * bound_value / c_omega(cfg.omega, cfg.alpha)
}

/// `2 R^2 (C_gamma(a)^2 + C_gamma(b)^2 d)`.
pub fn variance_bound(r_max: f64, cfg: &EstimatorConfig, divergence: f64) -> f64 {
    let ca = c_gamma(cfg.gamma, cfg.alpha);
    let cb = c_gamma(cfg.gamma, cfg.beta);
    2.0 * r_max * r_max * (ca * ca + cb * cb * divergence)
}

/// `J - sqrt(((1-delta)/delta) 2 R^2 (C_gamma(a)^2 + C_omega B))`.
pub fn cantelli_lower_bound(j_bar: f64, delta: f64, r_max: f64, cfg: &EstimatorConfig, b_value: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("confidence delta must lie in (0, 1), got {delta}")));
    }
    let ca = c_gamma(cfg.gamma, cfg.alpha);
    let co = c_omega(cfg.omega, cfg.alpha);
    Ok(j_bar - math::sqrt((1.0 - delta) / delta * 2.0 * r_max * r_max * (ca * ca + co * b_value)))
}

/// Chain rule from `dF/d log d_ij` to cotangents on the component means and on log-sigma,
/// for equal-covariance Gaussian components. `mean_cot` follows the layout of `means`.
pub fn pullback_log_d(
    div: &MixtureDivergences,
    spec: &MixtureSpec,
    grad_log_d: &[f64],
    means: &MeanEval,
    inv_var: &[f64],
    mean_cot: &mut [f64],
    log_sigma_cot: &mut [f64],
) -> bool {
    let a = div.order;
    let d = inv_var.len();
    let mut clipped = false;
    let mut delta = vec![0.0; d];
    for (i, &s) in spec.future_times.iter().enumerate() {
        let ms = means.at(s);
        let is = (s - means.first()) as usize;
        for (j, &t) in spec.past_times.iter().enumerate() {
            let g = grad_log_d[i * div.cols + j];
            if g == 0.0 {
                continue;
            }
            let mt = means.at(t);
            let it = (t - means.first()) as usize;
            let sat = div.is_saturated(i, j);
            for k in 0..d {
                delta[k] = ms[k] - mt[k];
            }
            for k in 0..d {
                let mut c = g * a * delta[k] * inv_var[k];
                let mut cs = -g * a * delta[k] * delta[k] * inv_var[k];
                if sat {
                    if libm::fabs(c) > SATURATED_GRAD_CAP || libm::fabs(cs) > SATURATED_GRAD_CAP {
                        clipped = true;
                    }
                    c = c.clamp(-SATURATED_GRAD_CAP, SATURATED_GRAD_CAP);
                    cs = cs.clamp(-SATURATED_GRAD_CAP, SATURATED_GRAD_CAP);
                }
                mean_cot[is * d + k] += c;
                mean_cot[it * d + k] -= c;
                log_sigma_cot[k] += cs;
            }
        }
    }
    clipped
}
