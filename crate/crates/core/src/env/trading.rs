use alloc::vec;
use alloc::vec::Vec;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{act, ActionBox, Dynamics, Transition};

/// One step of the AR(1) rate process.
pub fn vasicek_step(p: f64, u: f64) -> f64 {
    0.9 * p + u
}

/// `a (rate_next - rate) - fee |a - portfolio|`.
pub fn trading_reward(a: f64, rate: f64, rate_next: f64, portfolio: f64, fee: f64) -> f64 {
    a * (rate_next - rate) - fee * libm::fabs(a - portfolio)
}

/// Single-asset trading. `x^c` is the current position in `[-1, 1]`, `x^u` the rate.
/// The affine policy observes `(x^c, x^u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trading {
    pub fee: f64,
    pub reward_bound: f64,
}

impl Trading {
    pub fn new(fee: f64, reward_bound: f64) -> Self {
        Self { fee, reward_bound }
    }

    /// Bound for a recorded series: largest one-step move plus the worst fee.
    pub fn for_series(fee: f64, rates: &[f64]) -> Self {
        let dmax = rates.windows(2).map(|w| libm::fabs(w[1] - w[0])).fold(0.0, f64::max);
        Self { fee, reward_bound: dmax + 2.0 * fee }
    }
}

impl Dynamics for Trading {
    fn controllable_dim(&self) -> usize {
        1
    }
    fn exogenous_dim(&self) -> usize {
        1
    }
    fn policy_dim(&self) -> usize {
        3
    }
    fn action_box(&self) -> ActionBox {
        ActionBox { low: -1.0, high: 1.0 }
    }
    fn reward_bound(&self) -> f64 {
        self.reward_bound
    }
    fn initial_controllable(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn transition(&self, theta: &[f64], xc: &mut [f64], xu: &[f64], xu_next: &[f64], _rng: &mut dyn RngCore) -> Transition {
        let a = act(theta, &[xc[0], xu[0]], self.action_box());
        let reward = trading_reward(a, xu[0], xu_next[0], xc[0], self.fee);
        xc[0] = a;
        Transition { action: a, reward }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, stream, Stream};

    #[test]
    fn reward_examples() {
        assert_eq!(trading_reward(0.3, 1.2, 1.2, 0.3, 1e-5), 0.0);
        assert!((trading_reward(1.0, 1.0, 1.02, 0.0, 1e-5) - 0.01999).abs() < 1e-12);
    }

    #[test]
    fn vasicek_examples() {
        assert_eq!(vasicek_step(0.0, 0.0), 0.0);
        assert!((vasicek_step(1.0, 0.5) - 1.4).abs() < 1e-15);
    }

    #[test]
    fn vasicek_stationary_variance() {
        let mut rng = stream(42, Stream::Exogenous);
        let mut p = 0.0;
        for _ in 0..1000 {
            p = vasicek_step(p, normal(&mut rng));
        }
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            p = vasicek_step(p, normal(&mut rng));
            s += p;
            s2 += p * p;
        }
        let m = s / n as f64;
        let var = s2 / n as f64 - m * m;
        let target = 1.0 / (1.0 - 0.81);
        assert!((var - target).abs() / target < 0.05, "variance {var}");
    }

    #[test]
    fn series_bound() {
        let t = Trading::for_series(1e-5, &[1.0, 1.1, 1.05]);
        assert!((t.reward_bound - (0.1 + 2e-5)).abs() < 1e-12);
    }
}
