//! Argument parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use polis_core::estimation::EstimatorConfig;
use polis_core::harness::BoundComparisonConfig;

use crate::commands;
use crate::config::ConfigFile;
use crate::error::CliError;
use crate::io;

pub const OUT_ENV: &str = "POLIS_OUT";

#[derive(Debug, Parser)]
#[command(name = "polis", version, about = "Lifelong policy optimization experiments")]
pub struct Cli {
    /// Output root; defaults to $POLIS_OUT, then ./polis-out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the lifelong loop for every seed and write per-seed and aggregate CSVs.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Also run the stationary baseline on the same seeds.
        #[arg(long)]
        baseline: bool,
    },
    /// Grid over lambda and beta; one row per (lambda, beta, seed).
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated lambda values.
        #[arg(long, default_value = "10,100,1000", value_delimiter = ',')]
        lambdas: Vec<f64>,
        /// Comma-separated beta values (beta = 1 is rejected).
        #[arg(long, default_value = "10,100,500", value_delimiter = ',')]
        betas: Vec<usize>,
    },
    /// All six mixture bounds against a quadrature oracle, plus the amplitude experiment.
    BoundsBench {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optimizer steps of the amplitude experiment; 0 skips it.
        #[arg(long, default_value_t = 2000)]
        steps: usize,
    },
    /// Bias bound calculator.
    BiasBound {
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        #[arg(long)]
        alpha: usize,
        #[arg(long)]
        beta: usize,
        /// Lipschitz constant of the reward mean.
        #[arg(long, default_value_t = 1.0)]
        lm: f64,
        /// Lipschitz constant of the hyper-policy.
        #[arg(long, default_value_t = 0.0)]
        lnu: f64,
        /// Reward bound.
        #[arg(long, default_value_t = 1.0)]
        r: f64,
    },
    /// Write a synthetic `date,rate` series for smoke tests of the rates environment.
    GenRates {
        #[arg(long, default_value_t = 1500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Target file; defaults to <out>/rates.csv.
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Plain `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed count `10`, list `1,4,7` or range `0..5`.
    #[arg(long, conflicts_with = "seed")]
    pub seeds: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beta: Option<usize>,
    #[arg(long)]
    pub alpha: Option<usize>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Dam inflow profile (1, 2 or 3).
    #[arg(long)]
    pub inflow: Option<u8>,
    /// Any other configuration key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<crate::config::Resolved, CliError> {
        let mut f = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let flags: [(&str, Option<String>); 8] = [
            ("env", self.env.clone()),
            ("seeds", self.seed.map(|s| s.to_string() + ",")),
            ("seeds", self.seeds.clone()),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("beta", self.beta.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("omega", self.omega.map(|v| v.to_string())),
            ("gamma", self.gamma.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                f.set(k, v, &format!("--{k}"))?;
            }
        }
        if let Some(p) = self.inflow {
            f.set("inflow", p.to_string(), "--inflow")?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            f.set(k.trim(), v.trim(), "--set")?;
        }
        f.resolve()
    }
}

fn out_root(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("polis-out"))
}

/// Executes a parsed command, printing a short report to stdout.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    let out = out_root(&cli.out);
    match cli.command {
        Command::Run { run, baseline } => {
            let resolved = run.resolve()?;
            let s = commands::cmd_run(&resolved, &out, baseline)?;
            println!("wrote {}", s.dir.display());
            for (m, mean, sd) in &s.returns {
                println!("{:<10} mean return {mean:.6} std {sd:.6} over {} seeds", m.name(), resolved.seeds.len());
            }
        }
        Command::Sweep { run, lambdas, betas } => {
            let resolved = run.resolve()?;
            let p = commands::cmd_sweep(&resolved, &lambdas, &betas, &out)?;
            println!("wrote {}", p.display());
        }
        Command::BoundsBench { instances, seed, steps } => {
            let traj = (steps > 0).then(|| BoundComparisonConfig { steps, ..BoundComparisonConfig::default() });
            for p in commands::cmd_bounds_bench(instances, seed, traj.as_ref(), &out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::BiasBound { gamma, omega, alpha, beta, lm, lnu, r } => {
            let cfg = EstimatorConfig { alpha, beta, gamma, omega };
            let rep = commands::bias_report(lm, lnu, r, &cfg)?;
            println!("branch: {}", rep.branch);
            match &rep.loose {
                Ok(v) => println!("loose: {v}"),
                Err(e) => println!("loose: not available ({e})"),
            }
            println!("tight: {}", rep.tight);
        }
        Command::GenRates { n, seed, file } => {
            if n < 2 {
                return Err(CliError::Config("gen-rates needs n >= 2".into()));
            }
            let path = file.unwrap_or_else(|| out.join("rates.csv"));
            if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(d)?;
            }
            io::write_rates_csv(&path, &commands::synthetic_rates(n, seed))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
