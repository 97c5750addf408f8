//! Scalar helpers shared by the numerical modules.

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Log-densities below this threshold count as underflow.
pub const LOG_UNDERFLOW: f64 = -700.0;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn powi(x: f64, n: u64) -> f64 {
    libm::pow(x, n as f64)
}

/// `log(sum(exp(xs)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| exp(x - m)).sum();
    m + ln(s)
}

/// Log-sum-exp over an iterator; avoids an allocation when the caller streams terms.
pub fn log_sum_exp_iter<I: Iterator<Item = f64> + Clone>(xs: I) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    let s: f64 = xs.map(|x| exp(x - m)).sum();
    m + ln(s)
}

/// In-place softmax; returns the log normalizer.
pub fn softmax_in_place(xs: &mut [f64]) -> f64 {
    let lse = log_sum_exp(xs);
    for x in xs.iter_mut() {
        *x = exp(*x - lse);
    }
    lse
}

/// Geometric-sum normalizer `(1 - q^n)/(1 - q)`, equal to `n` at `q = 1`.
pub fn geometric_sum(q: f64, n: f64) -> f64 {
    if q >= 1.0 {
        n
    } else {
        (1.0 - powf(q, n)) / (1.0 - q)
    }
}
