//! Subcommand bodies, independent of argument parsing.

use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use polis_core::divergence::{self, BoundMethod, MixtureDivergences, VariationalParams};
use polis_core::estimation::{bias_bound, bias_bound_tight, EstimatorConfig};
use polis_core::harness::{run_baseline_stationary, run_bound_comparison, run_lifelong, BoundComparisonConfig, RunConfig, RunRecord};
use polis_core::quadrature::renyi_mixture_oracle;
use polis_core::rng::{normal, stream, Stream};

use crate::config::Resolved;
use crate::error::CliError;
use crate::io::{self, config_hash, content_hash, Metadata};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Polis,
    Stationary,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Polis => "polis",
            Method::Stationary => "stationary",
        }
    }

    fn run(self, cfg: &RunConfig) -> polis_core::Result<RunRecord> {
        match self {
            Method::Polis => run_lifelong(cfg),
            Method::Stationary => run_baseline_stationary(cfg),
        }
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Runs every (method, seed) pair; results come back in input order.
pub fn run_many(cfg: &RunConfig, methods: &[Method], seeds: &[u64]) -> Result<Vec<(Method, u64, RunRecord)>, CliError> {
    let jobs: Vec<(Method, u64)> = methods.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    jobs.par_iter()
        .map(|&(m, s)| m.run(&cfg.with_seed(s)).map(|r| (m, s, r)).map_err(CliError::from))
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub hash: String,
    /// `(method, mean, std)` of the target-period return across seeds.
    pub returns: Vec<(Method, f64, f64)>,
}

/// Runs the configured experiment and writes every artifact under `out/run-<hash>`.
pub fn cmd_run(resolved: &Resolved, out: &Path, with_baseline: bool) -> Result<RunSummary, CliError> {
    let cfg = &resolved.run;
    let hash = config_hash(cfg);
    let dir = out.join(format!("run-{}", &hash[..12]));
    std::fs::create_dir_all(&dir)?;
    let methods: &[Method] = if with_baseline { &[Method::Polis, Method::Stationary] } else { &[Method::Polis] };
    let results = run_many(cfg, methods, &resolved.seeds)?;

    let mut seed_rows = Vec::new();
    let mut diag_rows = Vec::new();
    for (m, s, rec) in &results {
        let stem = format!("{}_seed{s}", m.name());
        io::write_steps_csv(&dir.join(format!("{stem}_steps.csv")), &hash, m.name(), *s, rec)?;
        io::write_policy_json(&dir.join(format!("{stem}_policy.json")), &rec.final_policy)?;
        if *m == Method::Polis {
            io::write_trace_csv(&dir.join(format!("trace_seed{s}.csv")), &hash, *s, &rec.trace)?;
        }
        let rewards = rec.target_rewards();
        let (_, rstd) = mean_std(&rewards);
        let skipped = rec.retrains.iter().filter(|r| r.note.contains("skipped")).count();
        seed_rows.push(vec![
            hash.clone(),
            m.name().into(),
            s.to_string(),
            rec.target_return().to_string(),
            rstd.to_string(),
            rec.retrain_count.to_string(),
            skipped.to_string(),
        ]);
        diag_rows.extend(rec.retrains.iter().map(|r| io::retrain_row(&hash, m.name(), *s, r)));
    }
    io::write_table(
        &dir.join("seeds.csv"),
        &["config_hash", "method", "seed", "target_return", "reward_std", "retrains", "skipped_retrains"],
        &seed_rows,
    )?;
    io::write_table(&dir.join("diagnostics.csv"), &io::RETRAIN_HEADER, &diag_rows)?;

    let mut returns = Vec::new();
    let mut summary_rows = Vec::new();
    let mut curve_rows = Vec::new();
    for &m in methods {
        let recs: Vec<&RunRecord> = results.iter().filter(|(mm, _, _)| *mm == m).map(|(_, _, r)| r).collect();
        let finals: Vec<f64> = recs.iter().map(|r| r.target_return()).collect();
        let (mean, sd) = mean_std(&finals);
        returns.push((m, mean, sd));
        summary_rows.push(vec![hash.clone(), m.name().into(), finals.len().to_string(), mean.to_string(), sd.to_string()]);
        let curves: Vec<Vec<(u64, f64)>> = recs
            .iter()
            .map(|r| r.steps.iter().filter(|s| s.phase == polis_core::harness::Phase::Target).map(|s| (s.t, s.cumulative)).collect())
            .collect();
        for k in 0..curves[0].len() {
            let col: Vec<f64> = curves.iter().map(|c| c[k].1).collect();
            let (cm, cs) = mean_std(&col);
            curve_rows.push(vec![hash.clone(), m.name().into(), curves[0][k].0.to_string(), cm.to_string(), cs.to_string()]);
        }
    }
    io::write_table(&dir.join("summary.csv"), &["config_hash", "method", "n_seeds", "mean_return", "std_return"], &summary_rows)?;
    io::write_table(&dir.join("curve.csv"), &["config_hash", "method", "t", "mean_cumulative", "std_cumulative"], &curve_rows)?;
    Metadata::new("run", &hash, &resolved.seeds, cfg)?.write(&dir.join("metadata.json"))?;
    Ok(RunSummary { dir, hash, returns })
}

/// One `(lambda, beta, seed)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub hash: String,
    pub lambda: f64,
    pub beta: usize,
    pub seed: u64,
    pub target_return: f64,
    pub reward_std: f64,
}

pub fn sweep(resolved: &Resolved, lambdas: &[f64], betas: &[usize]) -> Result<Vec<SweepRow>, CliError> {
    if lambdas.is_empty() || betas.is_empty() {
        return Err(CliError::Config("the sweep grid is empty".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(CliError::Config(format!("lambda {l} must be finite and nonnegative")));
    }
    if betas.contains(&1) {
        return Err(CliError::Config("beta = 1 is outside the sweep range; use beta > 1".into()));
    }
    let mut cells = Vec::new();
    for &l in lambdas {
        for &b in betas {
            let mut cfg = resolved.run.clone();
            cfg.surrogate.lambda = l;
            cfg.estimator.beta = b;
            cfg.validate()?;
            let hash = config_hash(&cfg);
            for &s in &resolved.seeds {
                cells.push((cfg.clone(), hash.clone(), l, b, s));
            }
        }
    }
    cells
        .par_iter()
        .map(|(cfg, hash, l, b, s)| {
            let rec = run_lifelong(&cfg.with_seed(*s))?;
            let (_, sd) = mean_std(&rec.target_rewards());
            Ok(SweepRow { hash: hash.clone(), lambda: *l, beta: *b, seed: *s, target_return: rec.target_return(), reward_std: sd })
        })
        .collect()
}

pub fn cmd_sweep(resolved: &Resolved, lambdas: &[f64], betas: &[usize], out: &Path) -> Result<PathBuf, CliError> {
    let rows = sweep(resolved, lambdas, betas)?;
    let grid_hash = content_hash(&(&resolved.run.with_seed(0), lambdas, betas));
    let path = out.join(format!("sweep-{}.csv", &grid_hash[..12]));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![r.hash.clone(), r.lambda.to_string(), r.beta.to_string(), r.seed.to_string(), r.target_return.to_string(), r.reward_std.to_string()]
        })
        .collect();
    io::write_table(&path, &["config_hash", "lambda", "beta", "seed", "target_return", "reward_std"], &table)?;
    Ok(path)
}

/// Random one-dimensional mixture pair with shared standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixtureInstance {
    pub sigma: f64,
    pub future_means: Vec<f64>,
    pub zeta: Vec<f64>,
    pub past_means: Vec<f64>,
    pub mu: Vec<f64>,
}

fn simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

impl MixtureInstance {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let l = rng.random_range(1..=6);
        let k = rng.random_range(1..=6);
        let sigma = rng.random_range(0.5..2.0);
        let spread = rng.random_range(0.2..2.5);
        Self {
            sigma,
            future_means: (0..l).map(|_| spread * normal(rng)).collect(),
            zeta: simplex(l, rng),
            past_means: (0..k).map(|_| spread * normal(rng)).collect(),
            mu: simplex(k, rng),
        }
    }

    /// Every component of both mixtures equal, as for a stationary hyper-policy; weights stay random.
    pub fn identical<R: Rng>(rng: &mut R) -> Self {
        let mut m = Self::random(rng);
        let c = m.future_means[0];
        m.future_means.iter_mut().chain(m.past_means.iter_mut()).for_each(|x| *x = c);
        m
    }

    pub fn divergences(&self) -> polis_core::Result<MixtureDivergences> {
        MixtureDivergences::gaussian_1d(2.0, &self.zeta, &self.future_means, &self.mu, &self.past_means, self.sigma)
    }

    /// `d_2(future || past)` by quadrature.
    pub fn oracle(&self) -> f64 {
        renyi_mixture_oracle(2.0, &self.future_means, &self.zeta, &self.past_means, &self.mu, self.sigma)
    }
}

/// Bound values of every method on one instance, in [`BoundMethod::ALL`] order.
pub fn all_bounds(div: &MixtureDivergences, warm: Option<&VariationalParams>, iters: usize) -> polis_core::Result<Vec<divergence::Bound>> {
    BoundMethod::ALL.iter().map(|&m| divergence::evaluate(m, div, warm, iters)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub instance: usize,
    pub rows: usize,
    pub cols: usize,
    pub oracle: f64,
    pub bounds: Vec<f64>,
}

pub fn bounds_bench(n: usize, seed: u64) -> Result<Vec<BenchRow>, CliError> {
    if n == 0 {
        return Err(CliError::Config("bounds-bench needs at least one instance".into()));
    }
    let mut rng = stream(seed, Stream::Sampling);
    let mut warm: Option<VariationalParams> = None;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let inst = MixtureInstance::random(&mut rng);
        let div = inst.divergences()?;
        // the previous solution, moved onto this instance's marginals
        let w = warm.as_ref().and_then(|w| w.rescaled(&div));
        let bounds = all_bounds(&div, w.as_ref(), divergence::DEFAULT_DIRECT_ITERS)?;
        warm = bounds[5].params.clone();
        out.push(BenchRow {
            instance: i,
            rows: inst.future_means.len(),
            cols: inst.past_means.len(),
            oracle: inst.oracle(),
            bounds: bounds.iter().map(|b| b.value()).collect(),
        });
    }
    Ok(out)
}

/// Per method: mean `log(bound / oracle)` and how often it was the tightest.
pub fn tightness_ranking(rows: &[BenchRow]) -> Vec<(BoundMethod, f64, usize)> {
    let mut res: Vec<(BoundMethod, f64, usize)> = BoundMethod::ALL
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let gap = rows.iter().map(|r| (r.bounds[k] / r.oracle).ln()).sum::<f64>() / rows.len() as f64;
            let wins = rows
                .iter()
                .filter(|r| {
                    let best = r.bounds.iter().cloned().fold(f64::INFINITY, f64::min);
                    r.bounds[k] <= best * (1.0 + 1e-12)
                })
                .count();
            (m, gap, wins)
        })
        .collect();
    res.sort_by(|a, b| a.1.total_cmp(&b.1));
    res
}

pub fn cmd_bounds_bench(n: usize, seed: u64, trajectory: Option<&BoundComparisonConfig>, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let rows = bounds_bench(n, seed)?;
    let hash = content_hash(&("bounds-bench", n, seed));
    std::fs::create_dir_all(out)?;
    let mut header = vec!["config_hash", "instance", "rows", "cols", "oracle"];
    header.extend(BoundMethod::ALL.iter().map(|m| m.name()));
    header.push("min_slack");
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![hash.clone(), r.instance.to_string(), r.rows.to_string(), r.cols.to_string(), r.oracle.to_string()];
            row.extend(r.bounds.iter().map(f64::to_string));
            let slack = r.bounds.iter().map(|b| (b - r.oracle) / r.oracle).fold(f64::INFINITY, f64::min);
            row.push(slack.to_string());
            row
        })
        .collect();
    let short = &hash[..12];
    let bench = out.join(format!("bounds-{short}.csv"));
    io::write_table(&bench, &header, &table)?;
    let ranking: Vec<Vec<String>> = tightness_ranking(&rows)
        .iter()
        .enumerate()
        .map(|(rank, (m, gap, wins))| vec![hash.clone(), (rank + 1).to_string(), m.name().into(), gap.to_string(), wins.to_string()])
        .collect();
    let rank_path = out.join(format!("bounds-ranking-{short}.csv"));
    io::write_table(&rank_path, &["config_hash", "rank", "method", "mean_log_gap", "tightest_count"], &ranking)?;
    let mut paths = vec![bench, rank_path];
    if let Some(tc) = trajectory {
        let th = content_hash(tc);
        let traj: Vec<Vec<String>> = run_bound_comparison(tc)?
            .iter()
            .map(|r| vec![th.clone(), r.method.name().into(), r.step.to_string(), r.amplitude.to_string(), r.log_bound.to_string()])
            .collect();
        let p = out.join(format!("amplitude-{}.csv", &th[..12]));
        io::write_table(&p, &["config_hash", "method", "step", "amplitude", "log_bound"], &traj)?;
        paths.push(p);
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasReport {
    pub loose: Result<f64, String>,
    pub tight: f64,
    pub branch: &'static str,
}

pub fn bias_report(l_m: f64, l_nu: f64, r_max: f64, cfg: &EstimatorConfig) -> Result<BiasReport, CliError> {
    let tight = bias_bound_tight(l_m, l_nu, r_max, cfg)?;
    let loose = bias_bound(l_m, l_nu, r_max, cfg).map_err(|e| e.to_string());
    let branch = if cfg.omega >= 1.0 { "omega = 1 (weighted age (alpha-1)/2)" } else { "omega < 1" };
    Ok(BiasReport { loose, tight, branch })
}

/// A positive daily series that wanders like an exchange rate, business days only.
pub fn synthetic_rates(n: usize, seed: u64) -> Vec<(NaiveDate, f64)> {
    let mut rng = stream(seed, Stream::Exogenous);
    let mut date = NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date");
    let mut log_rate: f64 = 1.2f64.ln();
    let anchor = log_rate;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push((date, (log_rate.exp() * 1e5).round() / 1e5));
            log_rate += 0.002 * (anchor - log_rate) + 0.006 * normal(&mut rng);
        }
        date += Duration::days(1);
    }
    out
}
