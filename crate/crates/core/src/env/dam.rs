use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{act, ActionBox, Dynamics, Transition};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandPenalty {
    /// `max(a - D, 0)^2`: releasing more than the demand is penalized.
    #[serde(alias = "as_paper")]
    Excess,
    /// `max(D - a, 0)^2`: failing to meet the demand is penalized.
    Deficit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DamCost {
    pub flood: f64,
    pub demand: f64,
    pub total: f64,
}

/// Reservoir operation over one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dam {
    pub flood_level: f64,
    pub demand: f64,
    /// Water above this level spills without cost beyond flooding.
    pub capacity: f64,
    pub flood_weight: f64,
    pub demand_weight: f64,
    pub max_release: f64,
    pub initial_level: f64,
    pub penalty: DemandPenalty,
}

impl Dam {
    pub fn new(flood_weight: f64, demand_weight: f64, penalty: DemandPenalty) -> Self {
        Self {
            flood_level: 300.0,
            demand: 10.0,
            capacity: 500.0,
            flood_weight,
            demand_weight,
            max_release: 40.0,
            initial_level: 200.0,
            penalty,
        }
    }

    /// Convex weights of the three inflow profiles, indexed from 1.
    pub fn profile_weights(profile: u8) -> Option<(f64, f64)> {
        match profile {
            1 => Some((0.3, 0.7)),
            2 => Some((0.8, 0.2)),
            3 => Some((0.35, 0.65)),
            _ => None,
        }
    }
}

/// Advances the level by one day. Returns the next level, the effective release and the cost.
pub fn dam_step(dam: &Dam, level: f64, inflow: f64, release: f64) -> (f64, f64, DamCost) {
    let eff = release.clamp(0.0, level.max(0.0));
    let next = (level + inflow - eff).min(dam.capacity);
    let flood = {
        let e = (next - dam.flood_level).max(0.0);
        e * e
    };
    let demand = match dam.penalty {
        DemandPenalty::Excess => (eff - dam.demand).max(0.0),
        DemandPenalty::Deficit => (dam.demand - eff).max(0.0),
    };
    let demand = demand * demand;
    let total = dam.flood_weight * flood + dam.demand_weight * demand;
    (next, eff, DamCost { flood, demand, total })
}

impl Dynamics for Dam {
    fn controllable_dim(&self) -> usize {
        1
    }
    fn exogenous_dim(&self) -> usize {
        1
    }
    /// The policy observes the level scaled by the flood level, plus a bias.
    fn policy_dim(&self) -> usize {
        2
    }
    fn action_box(&self) -> ActionBox {
        ActionBox { low: 0.0, high: self.max_release }
    }
    fn reward_bound(&self) -> f64 {
        let f = (self.capacity - self.flood_level).max(0.0);
        let d = match self.penalty {
            DemandPenalty::Excess => (self.max_release - self.demand).max(0.0),
            DemandPenalty::Deficit => self.demand,
        };
        (self.flood_weight * f * f + self.demand_weight * d * d) / 1e3
    }
    fn initial_controllable(&self) -> Vec<f64> {
        vec![self.initial_level]
    }
    fn transition(&self, theta: &[f64], xc: &mut [f64], xu: &[f64], _xu_next: &[f64], _rng: &mut dyn RngCore) -> Transition {
        let a = act(theta, &[xc[0] / self.flood_level], self.action_box());
        let (next, _, cost) = dam_step(self, xc[0], xu[0], a);
        xc[0] = next;
        Transition { action: a, reward: -cost.total / 1e3 }
    }
}

/// Yearly inflow `m(t) = max(base + amplitude sin(2 pi t / period + phase), 0)` with
/// mean-one lognormal noise of log-scale `noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflowProfile {
    pub base: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub period: f64,
    pub noise: f64,
}

impl InflowProfile {
    /// The three built-in profiles, indexed from 1.
    pub fn builtin(profile: u8) -> Option<Self> {
        let pi = core::f64::consts::PI;
        let (base, amplitude, phase) = match profile {
            1 => (20.0, 8.0, 0.0),
            2 => (19.0, 4.0, 0.5 * pi),
            3 => (21.0, 10.0, pi),
            _ => return None,
        };
        Some(Self { base, amplitude, phase, period: 365.0, noise: 0.2 })
    }

    pub fn mean_at(&self, t: u64) -> f64 {
        let x = 2.0 * core::f64::consts::PI * t as f64 / self.period + self.phase;
        (self.base + self.amplitude * libm::sin(x)).max(0.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, t: u64, rng: &mut R) -> f64 {
        let z = crate::rng::normal(rng);
        self.mean_at(t) * math::exp(self.noise * z - 0.5 * self.noise * self.noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_examples() {
        let dam = Dam::new(1.0, 1.0, DemandPenalty::Excess);
        let (next, _, c) = dam_step(&dam, 300.0, 10.0, 0.0);
        assert_eq!(next, 310.0);
        assert_eq!(c.flood, 100.0);
        let (_, eff, c) = dam_step(&dam, 100.0, 0.0, 12.0);
        assert_eq!(eff, 12.0);
        assert_eq!(c.demand, 4.0);
        let dam = Dam::new(1.0, 1.0, DemandPenalty::Deficit);
        let (_, _, c) = dam_step(&dam, 100.0, 0.0, 7.0);
        assert_eq!(c.demand, 9.0);
        assert_eq!(Dam::profile_weights(1), Some((0.3, 0.7)));
    }

    #[test]
    fn release_limited_by_level() {
        let dam = Dam::new(0.3, 0.7, DemandPenalty::Excess);
        let (next, eff, _) = dam_step(&dam, 5.0, 0.0, 40.0);
        assert_eq!(eff, 5.0);
        assert_eq!(next, 0.0);
    }

    #[test]
    fn inflow_nonnegative() {
        let mut rng = crate::rng::stream(1, crate::rng::Stream::Exogenous);
        for p in 1..=3 {
            let prof = InflowProfile::builtin(p).unwrap();
            for t in 0..1000 {
                assert!(prof.sample(t, &mut rng) >= 0.0);
            }
        }
    }
}
