use alloc::vec::Vec;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{ActionBox, Dynamics, Transition};

/// Contextual bandit whose context follows the exogenous sinusoid.
///
/// The policy parameter is the action itself. Actions are clipped to the box
/// and the Gaussian noise is truncated at five standard deviations so the
/// reward stays bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandit {
    pub noise_std: f64,
    pub amplitude: f64,
    pub limit: f64,
}

impl Bandit {
    pub fn new(noise_std: f64, amplitude: f64) -> Self {
        Self { noise_std, amplitude, limit: 5.0 }
    }
}

/// `-(theta - context)^2 + noise`.
pub fn bandit_reward(theta: f64, context: f64, noise: f64) -> f64 {
    let d = theta - context;
    -d * d + noise
}

/// Expected reward when `theta ~ N(mu, sigma^2)`.
pub fn bandit_expected_reward(mu: f64, sigma: f64, context: f64) -> f64 {
    let d = mu - context;
    -d * d - sigma * sigma
}

impl Dynamics for Bandit {
    fn controllable_dim(&self) -> usize {
        0
    }
    fn exogenous_dim(&self) -> usize {
        1
    }
    fn policy_dim(&self) -> usize {
        1
    }
    fn action_box(&self) -> ActionBox {
        ActionBox { low: -self.limit, high: self.limit }
    }
    fn reward_bound(&self) -> f64 {
        let r = self.limit + libm::fabs(self.amplitude);
        r * r + 5.0 * self.noise_std
    }
    fn initial_controllable(&self) -> Vec<f64> {
        Vec::new()
    }
    fn transition(&self, theta: &[f64], _xc: &mut [f64], xu: &[f64], _xu_next: &[f64], rng: &mut dyn RngCore) -> Transition {
        let a = theta[0].clamp(-self.limit, self.limit);
        let noise = if self.noise_std > 0.0 { self.noise_std * crate::rng::normal(rng).clamp(-5.0, 5.0) } else { 0.0 };
        Transition { action: a, reward: bandit_reward(a, xu[0], noise) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, stream, Stream};

    #[test]
    fn at_context_is_maximal() {
        assert_eq!(bandit_reward(0.4, 0.4, 0.0), 0.0);
        assert!(bandit_reward(0.5, 0.4, 0.0) < 0.0);
    }

    #[test]
    fn expected_reward_monte_carlo() {
        let (mu, sigma, ctx) = (0.3, 0.7, -0.2);
        let mut rng = stream(3, Stream::Sampling);
        let n = 200_000;
        let mut s = 0.0;
        let mut s2 = 0.0;
        for _ in 0..n {
            let r = bandit_reward(mu + sigma * normal(&mut rng), ctx, 0.0);
            s += r;
            s2 += r * r;
        }
        let m = s / n as f64;
        let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
        assert!((m - bandit_expected_reward(mu, sigma, ctx)).abs() < 4.0 * se);
    }
}
