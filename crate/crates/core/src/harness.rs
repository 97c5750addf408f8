//! The lifelong loop: a behavioral period under a wide hyper-policy, then a
//! target period that retrains every `h` steps for `N` optimizer epochs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::divergence::{BoundMethod, VariationalParams};
use crate::env::{Bandit, Dam, DemandPenalty, Dynamics, EnvDynamics, Environment, ExogenousProcess, ExogenousTrace, InflowProfile, Trading};
use crate::error::{Error, Result};
use crate::estimation::{EstimatorConfig, History, Record};
use crate::hyper_policy::{GaussianHyperPolicy, MeanFunction, PositionalEncoding, TcnSpec, BEHAVIORAL_LOG_SIGMA, TARGET_LOG_SIGMA};
use crate::objective::{self, RmsProp, SurrogateConfig, Terms};
use crate::rng::{self, Stream};

pub const TRADING_FEE: f64 = 1e-5;
pub const VASICEK_REWARD_BOUND: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Stationary,
    Sinusoid,
    Tcn { channels: Vec<usize>, kernel: usize, encoding_dim: usize, encoding_base: f64 },
}

impl Architecture {
    pub fn default_tcn() -> Self {
        Architecture::Tcn { channels: vec![8, 8, 4], kernel: 3, encoding_dim: 8, encoding_base: 10_000.0 }
    }

    pub fn build(&self, out_dim: usize) -> Result<MeanFunction> {
        Ok(match self {
            Architecture::Stationary => MeanFunction::stationary(out_dim),
            Architecture::Sinusoid => MeanFunction::sinusoid(out_dim),
            Architecture::Tcn { channels, kernel, encoding_dim, encoding_base } => MeanFunction::TemporalConvNet(TcnSpec::new(
                PositionalEncoding::new(*encoding_dim, *encoding_base)?,
                channels.clone(),
                *kernel,
                out_dim,
            )?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Vasicek { fee: f64, initial: f64, reward_bound: f64 },
    Rates { fee: f64, rates: Vec<f64> },
    Dam { profile: u8, penalty: DemandPenalty, inflow: InflowProfile },
    Bandit { amplitude: f64, frequency: f64, noise: f64 },
}

impl EnvConfig {
    pub fn vasicek() -> Self {
        EnvConfig::Vasicek { fee: TRADING_FEE, initial: 0.0, reward_bound: VASICEK_REWARD_BOUND }
    }

    pub fn dam(profile: u8, penalty: DemandPenalty) -> Result<Self> {
        let inflow = InflowProfile::builtin(profile).ok_or_else(|| Error::Config(format!("unknown inflow profile {profile}")))?;
        Ok(EnvConfig::Dam { profile, penalty, inflow })
    }

    pub fn bandit(amplitude: f64, period: f64, noise: f64) -> Self {
        EnvConfig::Bandit { amplitude, frequency: 2.0 * core::f64::consts::PI / period, noise }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Vasicek { .. } => "vasicek",
            EnvConfig::Rates { .. } => "rates",
            EnvConfig::Dam { .. } => "dam",
            EnvConfig::Bandit { .. } => "bandit",
        }
    }

    pub fn dynamics(&self) -> Result<EnvDynamics> {
        Ok(match self {
            EnvConfig::Vasicek { fee, reward_bound, .. } => EnvDynamics::Trading(Trading::new(*fee, *reward_bound)),
            EnvConfig::Rates { fee, rates } => EnvDynamics::Trading(Trading::for_series(*fee, rates)),
            EnvConfig::Dam { profile, penalty, .. } => {
                let (wf, wd) = Dam::profile_weights(*profile).ok_or_else(|| Error::Config(format!("unknown inflow profile {profile}")))?;
                EnvDynamics::Dam(Dam::new(wf, wd, *penalty))
            }
            EnvConfig::Bandit { amplitude, noise, .. } => EnvDynamics::Bandit(Bandit::new(*noise, *amplitude)),
        })
    }

    pub fn process(&self) -> Result<ExogenousProcess> {
        Ok(match self {
            EnvConfig::Vasicek { initial, .. } => ExogenousProcess::Vasicek { initial: *initial },
            EnvConfig::Rates { rates, .. } => {
                if rates.iter().any(|r| !r.is_finite()) {
                    return Err(Error::Config("rates must be finite".into()));
                }
                ExogenousProcess::Series { values: rates.clone() }
            }
            EnvConfig::Dam { inflow, .. } => {
                if !(inflow.base >= 0.0 && inflow.noise >= 0.0 && inflow.period > 0.0) {
                    return Err(Error::Config("inflow profile needs nonnegative base and noise and a positive period".into()));
                }
                ExogenousProcess::Inflow(inflow.clone())
            }
            EnvConfig::Bandit { amplitude, frequency, .. } => ExogenousProcess::Sinusoid { amplitude: *amplitude, frequency: *frequency },
        })
    }

    pub fn build(&self, seed: u64) -> Result<Environment> {
        Environment::new(self.dynamics()?, self.process()?, rng::stream(seed, Stream::Exogenous), rng::stream(seed, Stream::Reward))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub estimator: EstimatorConfig,
    pub surrogate: SurrogateConfig,
    pub objective: Terms,
    pub retrain_period: usize,
    pub epochs: usize,
    pub behavioral_length: usize,
    pub target_length: usize,
    pub learn_sigma: bool,
    pub behavioral_log_sigma: f64,
    pub target_log_sigma: f64,
    pub architecture: Architecture,
    pub env: EnvConfig,
    pub seed: u64,
    /// Decomposed gradient diagnostics every this many epochs (and on the last).
    pub diagnostics_every: usize,
}

impl RunConfig {
    fn base(env: EnvConfig, alpha: usize, beta: usize, lambda: f64, learn_sigma: bool) -> Self {
        Self {
            estimator: EstimatorConfig { alpha, beta, gamma: 1.0, omega: 1.0 },
            surrogate: SurrogateConfig { lambda, ..SurrogateConfig::default() },
            objective: Terms::Full,
            retrain_period: 50,
            epochs: 100,
            behavioral_length: alpha,
            target_length: 500,
            learn_sigma,
            behavioral_log_sigma: BEHAVIORAL_LOG_SIGMA,
            target_log_sigma: TARGET_LOG_SIGMA,
            architecture: Architecture::default_tcn(),
            env,
            seed: 0,
            diagnostics_every: 10,
        }
    }

    /// Synthetic rate trading: window 500, lookahead 100, lambda 10, sigma fixed.
    pub fn vasicek() -> Self {
        Self::base(EnvConfig::vasicek(), 500, 100, 10.0, false)
    }

    /// Trading on a recorded rate series with the synthetic-rate settings.
    pub fn rates(rates: Vec<f64>) -> Self {
        Self::base(EnvConfig::Rates { fee: TRADING_FEE, rates }, 500, 100, 10.0, false)
    }

    /// Reservoir control: window 1000, lookahead 50, lambda 100, sigma learned.
    pub fn dam(profile: u8) -> Result<Self> {
        Ok(Self::base(EnvConfig::dam(profile, DemandPenalty::Excess)?, 1000, 50, 100.0, true))
    }

    pub fn bandit() -> Self {
        Self::base(EnvConfig::bandit(1.0, 50.0, 0.1), 100, 20, 1.0, false)
    }

    /// The stationary specialization: constant mean, optimized on the replayed past return only.
    pub fn stationary_baseline(&self) -> Self {
        Self { architecture: Architecture::Stationary, objective: Terms::PastOnly, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        self.surrogate.validate()?;
        if self.retrain_period < 1 || self.epochs < 1 {
            return Err(Error::Config("retrain period and epochs must be at least 1".into()));
        }
        if self.behavioral_length < self.estimator.alpha {
            return Err(Error::Config(format!(
                "behavioral length {} is shorter than the window {}",
                self.behavioral_length, self.estimator.alpha
            )));
        }
        if self.diagnostics_every < 1 {
            return Err(Error::Config("diagnostics interval must be at least 1".into()));
        }
        for (n, v) in [("behavioral log-sigma", self.behavioral_log_sigma), ("target log-sigma", self.target_log_sigma)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{n} must be finite")));
            }
        }
        if let Some(hz) = self.env.process()?.horizon() {
            let need = (self.behavioral_length + self.target_length + 1) as u64;
            if hz < need {
                return Err(Error::Config(format!("exogenous series has {hz} values, the run needs {need}")));
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.behavioral_length + self.target_length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Behavioral,
    Target,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Behavioral => "behavioral",
            Phase::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub t: u64,
    pub phase: Phase,
    pub theta: Vec<f64>,
    pub action: f64,
    pub reward: f64,
    /// Prefix sum of rewards within the target period; 0 during the behavioral period.
    pub cumulative: f64,
    pub retrain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainRow {
    pub retrain: usize,
    pub t: u64,
    pub epoch: usize,
    pub past_return: f64,
    pub future_return: f64,
    pub b_value: f64,
    pub penalty: f64,
    pub surrogate: f64,
    pub grad_norm_future: f64,
    pub grad_norm_past: f64,
    pub grad_norm_penalty: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub steps: Vec<StepRow>,
    pub retrains: Vec<RetrainRow>,
    pub retrain_count: usize,
    pub epochs_run: Vec<usize>,
    pub final_policy: GaussianHyperPolicy,
    pub trace: ExogenousTrace,
    /// Retrains whose past-term gradient vanished although past rewards varied.
    pub forgetting_guard_violations: usize,
}

impl RunRecord {
    /// Cumulative reward over the target period.
    pub fn target_return(&self) -> f64 {
        self.steps.iter().rev().find(|s| s.phase == Phase::Target).map(|s| s.cumulative).unwrap_or(0.0)
    }

    pub fn target_rewards(&self) -> Vec<f64> {
        self.steps.iter().filter(|s| s.phase == Phase::Target).map(|s| s.reward).collect()
    }
}

/// Fails when a retrain at time `now` could see data stamped after `now`.
fn audit_no_lookahead(now: u64, snapshot: &History, trace_end_used: u64) -> Result<()> {
    if let Some(latest) = snapshot.latest_time() {
        if latest >= now {
            return Err(Error::History(format!("retrain at t={now} sees a record from t={latest}")));
        }
    }
    if trace_end_used > now {
        return Err(Error::History(format!("retrain at t={now} reads the exogenous trace at t={trace_end_used}")));
    }
    Ok(())
}

struct Retrainer<'a> {
    cfg: &'a RunConfig,
    opt: RmsProp,
    warm: Option<VariationalParams>,
    replay_rng: rng::SimRng,
}

impl Retrainer<'_> {
    fn run(
        &mut self,
        index: usize,
        now: u64,
        env: &Environment,
        history: &History,
        hp: &GaussianHyperPolicy,
        rows: &mut Vec<RetrainRow>,
    ) -> Result<(GaussianHyperPolicy, usize, bool)> {
        let cfg = self.cfg;
        let snapshot = history.snapshot(cfg.estimator.alpha)?;
        audit_no_lookahead(now, &snapshot, now)?;
        let trace = env.trace().clone();
        let dynamics = env.dynamics();
        let mut rho = hp.params().to_vec();
        let mut current = hp.clone();
        let rewards: Vec<f64> = snapshot.records().iter().map(|r| r.reward).collect();
        let varied = rewards.iter().any(|&r| r != rewards[0]);
        let mut guard_violation = false;
        let mut done = 0;
        for epoch in 0..cfg.epochs {
            let decompose = epoch % cfg.diagnostics_every == 0 || epoch + 1 == cfg.epochs;
            let step = objective::surrogate_step(
                Some((dynamics, &trace)),
                &snapshot,
                &current,
                &cfg.estimator,
                &cfg.surrogate,
                cfg.objective,
                self.warm.as_ref(),
                decompose,
                &mut self.replay_rng,
            );
            let step = match step {
                Ok(s) => s,
                Err(Error::Degenerate { t }) => {
                    rows.push(note_row(index, now, epoch, format!("degenerate importance weights at t={t}; retrain skipped")));
                    return Ok((hp.clone(), done, guard_violation));
                }
                Err(e) => return Err(e),
            };
            if cfg.surrogate.bound == BoundMethod::DirectOptWarm {
                self.warm = step.bound.params.clone();
            }
            if decompose {
                let (nf, np, npen) = step.grad.norms();
                if epoch == 0 && varied && cfg.surrogate.n_replays > 1 && np == 0.0 {
                    guard_violation = true;
                }
                rows.push(RetrainRow {
                    retrain: index,
                    t: now,
                    epoch,
                    past_return: step.eval.past_return,
                    future_return: step.eval.future_return,
                    b_value: step.eval.b_value,
                    penalty: step.eval.penalty,
                    surrogate: step.eval.surrogate,
                    grad_norm_future: nf,
                    grad_norm_past: np,
                    grad_norm_penalty: npen,
                    note: if step.clipped { "saturated divergence gradient clipped".into() } else { String::new() },
                });
            }
            let g = step.grad.total();
            if self.opt.step(&mut rho, &g).is_err() {
                rows.push(note_row(index, now, epoch, "non-finite gradient; step rejected".into()));
            } else {
                current = current.with_params(rho.clone())?;
            }
            done += 1;
        }
        Ok((current, done, guard_violation))
    }
}

fn note_row(retrain: usize, t: u64, epoch: usize, note: String) -> RetrainRow {
    RetrainRow {
        retrain,
        t,
        epoch,
        past_return: f64::NAN,
        future_return: f64::NAN,
        b_value: f64::NAN,
        penalty: f64::NAN,
        surrogate: f64::NAN,
        grad_norm_future: f64::NAN,
        grad_norm_past: f64::NAN,
        grad_norm_penalty: f64::NAN,
        note,
    }
}

/// Runs the behavioral and target periods with retraining.
pub fn run_lifelong(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let mut env = cfg.env.build(cfg.seed)?;
    let d1 = env.dynamics().policy_dim();
    let mean = cfg.architecture.build(d1)?;
    let mut init_rng = rng::stream(cfg.seed, Stream::Init);
    let weights = mean.init_weights(&mut init_rng);
    let behavioral = GaussianHyperPolicy::new(mean.clone(), weights.clone(), vec![cfg.behavioral_log_sigma; d1], false)?;
    let mut target = GaussianHyperPolicy::new(mean, weights, vec![cfg.target_log_sigma; d1], cfg.learn_sigma)?;

    let mut sample_rng = rng::stream(cfg.seed, Stream::Sampling);
    let mut retrainer = Retrainer {
        cfg,
        opt: RmsProp::new(target.param_dim()),
        warm: None,
        replay_rng: rng::stream(cfg.seed, Stream::Replay),
    };
    let mut history = History::new(cfg.estimator.alpha);
    let mut steps = Vec::with_capacity(cfg.total_steps());
    let mut retrains = Vec::new();
    let mut epochs_run = Vec::new();
    let mut violations = 0;
    let mut cumulative = 0.0;

    for t in 0..cfg.total_steps() as u64 {
        let in_target = t >= cfg.behavioral_length as u64;
        let j = t.saturating_sub(cfg.behavioral_length as u64) as usize;
        let retrain_now = in_target && j % cfg.retrain_period == 0 && j + cfg.retrain_period <= cfg.target_length;
        if retrain_now {
            let index = epochs_run.len();
            let (updated, done, violated) = retrainer.run(index, t, &env, &history, &target, &mut retrains)?;
            target = updated;
            epochs_run.push(done);
            violations += violated as usize;
        }
        let hp = if in_target { &target } else { &behavioral };
        let theta = hp.sample(t, &mut sample_rng);
        let state = env.state();
        let out = env.step(&theta)?;
        if in_target {
            cumulative += out.reward;
        }
        history.push(Record {
            t,
            theta: theta.clone(),
            reward: out.reward,
            exogenous: state.exogenous,
            controllable: state.controllable,
        })?;
        steps.push(StepRow {
            t,
            phase: if in_target { Phase::Target } else { Phase::Behavioral },
            theta,
            action: out.action,
            reward: out.reward,
            cumulative: if in_target { cumulative } else { 0.0 },
            retrain: retrain_now,
        });
    }
    Ok(RunRecord {
        steps,
        retrains,
        retrain_count: epochs_run.len(),
        epochs_run,
        final_policy: target,
        trace: env.trace().clone(),
        forgetting_guard_violations: violations,
    })
}

/// The stationary hyper-policy baseline under the same schedule.
pub fn run_baseline_stationary(cfg: &RunConfig) -> Result<RunRecord> {
    run_lifelong(&cfg.stationary_baseline())
}

/// Penalty-only optimization of a sinusoidal mean on the contextual bandit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundComparisonConfig {
    pub alpha: usize,
    pub beta: usize,
    pub gamma: f64,
    pub omega: f64,
    pub lambda: f64,
    /// Period of the initial sinusoid (and of the bandit context).
    pub period: f64,
    pub initial_amplitude: f64,
    pub log_sigma: f64,
    pub steps: usize,
    pub log_every: usize,
    pub direct_iters: usize,
    /// Train `(A, phi, psi, B)` instead of the amplitude alone.
    pub train_all: bool,
    pub methods: Vec<BoundMethod>,
}

impl Default for BoundComparisonConfig {
    fn default() -> Self {
        Self {
            alpha: 100,
            beta: 20,
            gamma: 1.0,
            omega: 1.0,
            lambda: 1.0,
            period: 50.0,
            initial_amplitude: 1.0,
            log_sigma: 0.0,
            steps: 2000,
            log_every: 100,
            direct_iters: crate::divergence::DEFAULT_DIRECT_ITERS,
            train_all: false,
            methods: BoundMethod::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: BoundMethod,
    pub step: usize,
    pub amplitude: f64,
    pub log_bound: f64,
}

/// Trajectories of the amplitude and of the log-bound for every method.
pub fn run_bound_comparison(cfg: &BoundComparisonConfig) -> Result<Vec<ComparisonRow>> {
    let est = EstimatorConfig { alpha: cfg.alpha, beta: cfg.beta, gamma: cfg.gamma, omega: cfg.omega };
    est.validate()?;
    if cfg.log_every == 0 || !(cfg.period > 0.0) {
        return Err(Error::Config("log interval and period must be positive".into()));
    }
    let latest = cfg.alpha as u64;
    let freq = 2.0 * core::f64::consts::PI / cfg.period;
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let scfg = SurrogateConfig { lambda: cfg.lambda, bound: method, direct_iters: cfg.direct_iters, ..SurrogateConfig::default() };
        let mut hp = GaussianHyperPolicy::new(MeanFunction::sinusoid(1), vec![cfg.initial_amplitude, freq, 0.0, 0.0], vec![cfg.log_sigma], false)?;
        let mut opt = RmsProp::new(hp.param_dim());
        let mut warm: Option<VariationalParams> = None;
        for step in 0..=cfg.steps {
            let (_, g, bound) = objective::penalty_only(latest, &hp, &est, &scfg, warm.as_ref())?;
            if method == BoundMethod::DirectOptWarm {
                warm = bound.params.clone();
            }
            if step % cfg.log_every == 0 {
                rows.push(ComparisonRow { method, step, amplitude: hp.params()[0], log_bound: bound.log_value });
            }
            if step == cfg.steps {
                break;
            }
            let mut g = g;
            if !cfg.train_all {
                g[1..].iter_mut().for_each(|x| *x = 0.0);
            }
            let mut rho = hp.params().to_vec();
            opt.step(&mut rho, &g)?;
            hp = hp.with_params(rho)?;
        }
    }
    Ok(rows)
}
