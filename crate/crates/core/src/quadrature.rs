//! Adaptive Simpson quadrature and a one-dimensional mixture divergence oracle.
//!
//! Nothing in the estimation or training path calls into this module; it
//! exists to cross-check closed forms and bounds.

use crate::math;

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let (lm, flm, left) = simpson(f, a, fa, m, fm);
    let (rm, frm, right) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    let floor = 64.0 * f64::EPSILON * libm::fabs(left + right);
    if depth == 0 || libm::fabs(delta) <= 15.0 * tol.max(floor) {
        return left + right + delta / 15.0;
    }
    adapt(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) + adapt(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
}

/// Integral of `f` over `[a, b]` split into `panels` pieces.
///
/// `rel_tol` is relative to a coarse first pass over the same panels.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut coarse = 0.0;
    let mut pieces = alloc::vec::Vec::with_capacity(panels);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let hi = if p + 1 == panels { b } else { lo + h };
        let (flo, fhi) = (f(lo), f(hi));
        let (m, fm, whole) = simpson(&f, lo, flo, hi, fhi);
        coarse += libm::fabs(whole);
        pieces.push((lo, flo, hi, fhi, m, fm, whole));
    }
    let tol = (rel_tol * coarse).max(f64::MIN_POSITIVE) / panels as f64;
    pieces.into_iter().map(|(lo, flo, hi, fhi, m, fm, whole)| adapt(&f, lo, flo, hi, fhi, m, fm, whole, tol, 30)).sum()
}

fn log_mixture_density(x: f64, means: &[f64], weights: &[f64], sigma: f64) -> f64 {
    let c = -math::ln(sigma) - 0.5 * math::LN_2PI;
    let mut m = f64::NEG_INFINITY;
    let n = means.len();
    let mut terms = alloc::vec![0.0f64; n];
    for i in 0..n {
        let z = (x - means[i]) / sigma;
        let v = if weights[i] > 0.0 { math::ln(weights[i]) + c - 0.5 * z * z } else { f64::NEG_INFINITY };
        terms[i] = v;
        m = m.max(v);
    }
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + math::ln(terms[..n].iter().map(|&v| math::exp(v - m)).sum::<f64>())
}

/// `d_a(P || Q) = (int p^a q^(1-a))^(1/(a-1))` for one-dimensional Gaussian
/// mixtures with a shared standard deviation.
///
/// The integration range covers 12 standard deviations around every
/// component mean and around every reflected point `m_p + (a-1)(m_p - m_q)`,
/// where the integrand of a single pair peaks.
pub fn renyi_mixture_oracle(order: f64, p_means: &[f64], p_weights: &[f64], q_means: &[f64], q_weights: &[f64], sigma: f64) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &a in p_means {
        for &b in q_means {
            for x in [a, b, a + (order - 1.0) * (a - b)] {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
    }
    lo -= 12.0 * sigma;
    hi += 12.0 * sigma;
    let integrand = |x: f64| {
        let lp = log_mixture_density(x, p_means, p_weights, sigma);
        let lq = log_mixture_density(x, q_means, q_weights, sigma);
        math::exp(order * lp + (1.0 - order) * lq)
    };
    let panels = (((hi - lo) / sigma) as usize).clamp(64, 4096);
    let v = integrate(integrand, lo, hi, 1e-12, panels);
    math::powf(v, 1.0 / (order - 1.0))
}
