//! Environments with a factored state: a controllable part `x^c` driven by
//! actions and an exogenous part `x^u` that evolves on its own. The exogenous
//! path is recorded, which makes replays under new policy parameters exact.

mod bandit;
mod dam;
mod trading;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

pub use bandit::{bandit_expected_reward, bandit_reward, Bandit};
pub use dam::{dam_step, Dam, DamCost, DemandPenalty, InflowProfile};
pub use trading::{trading_reward, vasicek_step, Trading};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBox {
    pub low: f64,
    pub high: f64,
}

impl ActionBox {
    pub fn contains(&self, a: f64) -> bool {
        a >= self.low && a <= self.high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredState {
    pub controllable: Vec<f64>,
    pub exogenous: Vec<f64>,
}

/// `a = lo + (hi - lo) (tanh(w.x + b0) + 1) / 2` with `theta = (w, b0)`.
#[derive(Debug, Clone, Copy)]
pub struct AffinePolicy<'a> {
    theta: &'a [f64],
}

impl<'a> AffinePolicy<'a> {
    pub fn new(theta: &'a [f64]) -> Self {
        Self { theta }
    }

    pub fn act(&self, obs: &[f64], bx: ActionBox) -> f64 {
        let n = self.theta.len() - 1;
        debug_assert_eq!(obs.len(), n);
        let z: f64 = self.theta[..n].iter().zip(obs).map(|(w, x)| w * x).sum::<f64>() + self.theta[n];
        let a = bx.low + (bx.high - bx.low) * (libm::tanh(z) + 1.0) * 0.5;
        a.clamp(bx.low, bx.high)
    }
}

pub fn act(theta: &[f64], obs: &[f64], bx: ActionBox) -> f64 {
    AffinePolicy::new(theta).act(obs, bx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub action: f64,
    pub reward: f64,
}

/// Per-environment controllable dynamics and reward.
pub trait Dynamics {
    fn controllable_dim(&self) -> usize;
    fn exogenous_dim(&self) -> usize;
    /// Dimension of the policy parameter `theta`.
    fn policy_dim(&self) -> usize;
    fn action_box(&self) -> ActionBox;
    fn reward_bound(&self) -> f64;
    fn initial_controllable(&self) -> Vec<f64>;
    /// Applies `theta` at `(xc, xu)`, writes the next controllable state into `xc`.
    fn transition(&self, theta: &[f64], xc: &mut [f64], xu: &[f64], xu_next: &[f64], rng: &mut dyn RngCore) -> Transition;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvDynamics {
    Trading(Trading),
    Dam(Dam),
    Bandit(Bandit),
}

impl Dynamics for EnvDynamics {
    fn controllable_dim(&self) -> usize {
        match self {
            EnvDynamics::Trading(d) => d.controllable_dim(),
            EnvDynamics::Dam(d) => d.controllable_dim(),
            EnvDynamics::Bandit(d) => d.controllable_dim(),
        }
    }
    fn exogenous_dim(&self) -> usize {
        match self {
            EnvDynamics::Trading(d) => d.exogenous_dim(),
            EnvDynamics::Dam(d) => d.exogenous_dim(),
            EnvDynamics::Bandit(d) => d.exogenous_dim(),
        }
    }
    fn policy_dim(&self) -> usize {
        match self {
            EnvDynamics::Trading(d) => d.policy_dim(),
            EnvDynamics::Dam(d) => d.policy_dim(),
            EnvDynamics::Bandit(d) => d.policy_dim(),
        }
    }
    fn action_box(&self) -> ActionBox {
        match self {
            EnvDynamics::Trading(d) => d.action_box(),
            EnvDynamics::Dam(d) => d.action_box(),
            EnvDynamics::Bandit(d) => d.action_box(),
        }
    }
    fn reward_bound(&self) -> f64 {
        match self {
            EnvDynamics::Trading(d) => d.reward_bound(),
            EnvDynamics::Dam(d) => d.reward_bound(),
            EnvDynamics::Bandit(d) => d.reward_bound(),
        }
    }
    fn initial_controllable(&self) -> Vec<f64> {
        match self {
            EnvDynamics::Trading(d) => d.initial_controllable(),
            EnvDynamics::Dam(d) => d.initial_controllable(),
            EnvDynamics::Bandit(d) => d.initial_controllable(),
        }
    }
    fn transition(&self, theta: &[f64], xc: &mut [f64], xu: &[f64], xu_next: &[f64], rng: &mut dyn RngCore) -> Transition {
        match self {
            EnvDynamics::Trading(d) => d.transition(theta, xc, xu, xu_next, rng),
            EnvDynamics::Dam(d) => d.transition(theta, xc, xu, xu_next, rng),
            EnvDynamics::Bandit(d) => d.transition(theta, xc, xu, xu_next, rng),
        }
    }
}

/// Generator of the exogenous path `x^u_0, x^u_1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExogenousProcess {
    /// `p_{t+1} = 0.9 p_t + u_t`, `u_t ~ N(0, 1)`.
    Vasicek { initial: f64 },
    /// A fixed recorded series, e.g. ingested close rates.
    Series { values: Vec<f64> },
    /// Seasonal inflow with lognormal noise.
    Inflow(InflowProfile),
    /// Deterministic `c sin(phi t)` context.
    Sinusoid { amplitude: f64, frequency: f64 },
}

impl ExogenousProcess {
    pub fn dim(&self) -> usize {
        1
    }

    /// Value at time `t` given the value at `t-1` (`None` at `t = 0`).
    pub fn generate<R: Rng + ?Sized>(&self, t: u64, prev: Option<&[f64]>, rng: &mut R) -> Result<Vec<f64>> {
        Ok(match self {
            ExogenousProcess::Vasicek { initial } => match prev {
                None => vec![*initial],
                Some(p) => vec![vasicek_step(p[0], rng::normal(rng))],
            },
            ExogenousProcess::Series { values } => match values.get(t as usize) {
                Some(&v) => vec![v],
                None => {
                    return Err(Error::Range {
                        requested: t,
                        available_from: 0,
                        available_to: values.len().saturating_sub(1) as u64,
                    })
                }
            },
            ExogenousProcess::Inflow(p) => vec![p.sample(t, rng)],
            ExogenousProcess::Sinusoid { amplitude, frequency } => vec![amplitude * libm::sin(frequency * t as f64)],
        })
    }

    /// Steps available before the process runs out (`None` when unbounded).
    pub fn horizon(&self) -> Option<u64> {
        match self {
            ExogenousProcess::Series { values } => Some(values.len() as u64),
            _ => None,
        }
    }
}

/// Recorded exogenous values from `start` on; append-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousTrace {
    start: u64,
    dim: usize,
    values: Vec<f64>,
}

impl ExogenousTrace {
    pub fn new(start: u64, dim: usize) -> Self {
        Self { start, dim, values: Vec::new() }
    }

    pub fn start(&self) -> u64 {
        self.start
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One past the last recorded time.
    pub fn end(&self) -> u64 {
        self.start + self.len() as u64
    }

    pub fn push(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.dim);
        self.values.extend_from_slice(v);
    }

    fn range_err(&self, t: u64) -> Error {
        Error::Range { requested: t, available_from: self.start, available_to: self.end().saturating_sub(1) }
    }

    pub fn get(&self, t: u64) -> Result<&[f64]> {
        if t < self.start || t >= self.end() {
            return Err(self.range_err(t));
        }
        let i = (t - self.start) as usize;
        Ok(&self.values[i * self.dim..(i + 1) * self.dim])
    }

    /// Flattened values for `from ..= to`.
    pub fn window(&self, from: u64, to: u64) -> Result<&[f64]> {
        if from < self.start || from > to {
            return Err(self.range_err(from));
        }
        if to >= self.end() {
            return Err(self.range_err(to));
        }
        let a = (from - self.start) as usize;
        let b = (to - self.start) as usize + 1;
        Ok(&self.values[a * self.dim..b * self.dim])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub t: u64,
    pub action: f64,
    pub reward: f64,
    /// State observed before acting.
    pub state: FactoredState,
}

/// A stateful environment instance: dynamics, exogenous generator and recorded trace.
#[derive(Debug, Clone)]
pub struct Environment {
    dynamics: EnvDynamics,
    process: ExogenousProcess,
    trace: ExogenousTrace,
    xc: Vec<f64>,
    t: u64,
    exo_rng: SimRng,
    noise_rng: SimRng,
}

impl Environment {
    pub fn new(dynamics: EnvDynamics, process: ExogenousProcess, exo_rng: SimRng, noise_rng: SimRng) -> Result<Self> {
        let mut env = Self {
            xc: dynamics.initial_controllable(),
            trace: ExogenousTrace::new(0, process.dim()),
            dynamics,
            process,
            t: 0,
            exo_rng,
            noise_rng,
        };
        if env.dynamics.exogenous_dim() != env.process.dim() {
            return Err(Error::Config("exogenous process dimension does not match the dynamics".into()));
        }
        env.extend_trace(1)?;
        Ok(env)
    }

    fn extend_trace(&mut self, upto_exclusive: u64) -> Result<()> {
        while self.trace.end() < upto_exclusive {
            let t = self.trace.end();
            let prev = if t == 0 { None } else { Some(self.trace.get(t - 1)?.to_vec()) };
            let v = self.process.generate(t, prev.as_deref(), &mut self.exo_rng)?;
            self.trace.push(&v);
        }
        Ok(())
    }

    pub fn dynamics(&self) -> &EnvDynamics {
        &self.dynamics
    }

    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn trace(&self) -> &ExogenousTrace {
        &self.trace
    }

    pub fn state(&self) -> FactoredState {
        FactoredState {
            controllable: self.xc.clone(),
            exogenous: self.trace.get(self.t).map(|s| s.to_vec()).unwrap_or_default(),
        }
    }

    /// Acts with `theta` at the current time and advances by one step.
    pub fn step(&mut self, theta: &[f64]) -> Result<StepOutcome> {
        if theta.len() != self.dynamics.policy_dim() {
            return Err(Error::Config(format!(
                "theta has length {}, environment expects {}",
                theta.len(),
                self.dynamics.policy_dim()
            )));
        }
        self.extend_trace(self.t + 2)?;
        let state = self.state();
        let xu_next = self.trace.get(self.t + 1)?.to_vec();
        let tr = self.dynamics.transition(theta, &mut self.xc, &state.exogenous, &xu_next, &mut self.noise_rng);
        let out = StepOutcome { t: self.t, action: tr.action, reward: tr.reward, state };
        self.t += 1;
        Ok(out)
    }
}

/// Realized exogenous values for `from ..= to`.
pub fn exogenous_trace(env: &Environment, from: u64, to: u64) -> Result<&[f64]> {
    env.trace().window(from, to)
}

/// Re-runs the controllable dynamics on a recorded exogenous path.
///
/// `thetas[i]` is applied at time `from + i`, starting from controllable state `xc0`.
pub fn replay(
    dynamics: &EnvDynamics,
    trace: &ExogenousTrace,
    from: u64,
    xc0: &[f64],
    thetas: &[Vec<f64>],
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let n = thetas.len() as u64;
    if n == 0 {
        return Ok(Vec::new());
    }
    let xu = trace.window(from, from + n)?;
    let d = trace.dim();
    let mut xc = xc0.to_vec();
    let mut rewards = Vec::with_capacity(thetas.len());
    for (i, th) in thetas.iter().enumerate() {
        let tr = dynamics.transition(th, &mut xc, &xu[i * d..(i + 1) * d], &xu[(i + 1) * d..(i + 2) * d], rng);
        rewards.push(tr.reward);
    }
    Ok(rewards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn affine_examples() {
        let bx = ActionBox { low: -1.0, high: 1.0 };
        assert_eq!(act(&[0.0, 0.0, 0.0], &[0.3, -2.0], bx), 0.0);
        assert!((act(&[1.0, 0.0, 0.0], &[0.5, 7.0], bx) - 0.462_117_157_260_009_8).abs() < 1e-12);
        assert!((act(&[0.0, 0.0, 50.0], &[0.5, 7.0], bx) - 1.0).abs() < 1e-12);
    }

    fn vasicek_env(seed: u64) -> Environment {
        Environment::new(
            EnvDynamics::Trading(Trading::new(1e-5, 10.0)),
            ExogenousProcess::Vasicek { initial: 0.0 },
            stream(seed, Stream::Exogenous),
            stream(seed, Stream::Reward),
        )
        .unwrap()
    }

    #[test]
    fn trace_independent_of_actions() {
        let mut a = vasicek_env(3);
        let mut b = vasicek_env(3);
        for t in 0..500 {
            a.step(&[0.0, 0.0, 1.0]).unwrap();
            b.step(&[1.0, -3.0, (t % 7) as f64 - 3.0]).unwrap();
        }
        assert_eq!(a.trace(), b.trace());
        assert_eq!(a.trace().len(), 501);
    }

    #[test]
    fn trace_window_before_start_is_range_error() {
        let env = vasicek_env(1);
        let mut tr = ExogenousTrace::new(10, 1);
        tr.push(&[1.0]);
        assert!(matches!(tr.window(5, 10), Err(Error::Range { .. })));
        assert!(matches!(exogenous_trace(&env, 0, 5), Err(Error::Range { .. })));
    }

    #[test]
    fn replay_reproduces_rewards() {
        let mut env = vasicek_env(11);
        let mut rng = stream(11, Stream::Sampling);
        let mut thetas = Vec::new();
        let mut rewards = Vec::new();
        let xc0 = env.state().controllable;
        for _ in 0..200 {
            let th: Vec<f64> = (0..3).map(|_| rng::normal(&mut rng)).collect();
            rewards.push(env.step(&th).unwrap().reward);
            thetas.push(th);
        }
        let mut nrng = stream(0, Stream::Replay);
        let rep = replay(env.dynamics(), env.trace(), 0, &xc0, &thetas, &mut nrng).unwrap();
        assert_eq!(rep, rewards);
    }
}
