//! Plain `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; missing
//! keys take the environment defaults. Command-line overrides are applied on
//! top of the file with the same keys.

use std::fs;
use std::path::{Path, PathBuf};

use polis_core::divergence::BoundMethod;
use polis_core::env::DemandPenalty;
use polis_core::harness::{Architecture, EnvConfig, RunConfig};
use polis_core::objective::ReplayCredit;

use crate::error::CliError;
use crate::io::read_rates_csv;

pub const KEYS: &[&str] = &[
    "env",
    "seeds",
    "alpha",
    "beta",
    "gamma",
    "omega",
    "lambda",
    "retrain_period",
    "epochs",
    "behavioral_length",
    "target_length",
    "n_replays",
    "learn_sigma",
    "behavioral_log_sigma",
    "target_log_sigma",
    "architecture",
    "tcn_channels",
    "tcn_kernel",
    "encoding_dim",
    "encoding_base",
    "bound",
    "direct_iters",
    "credit",
    "objective",
    "inflow",
    "demand_penalty",
    "rates_csv",
    "fee",
    "bandit_amplitude",
    "bandit_period",
    "bandit_noise",
    "diagnostics_every",
];

/// One `key = value` with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub origin: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub entries: Vec<Entry>,
    /// Directory relative paths in the file resolve against.
    pub base_dir: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str, name: &str) -> Result<Self, CliError> {
        let mut entries: Vec<Entry> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let origin = format!("{name}:{}", n + 1);
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}: expected `key = value`, found `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(CliError::Config(format!("{origin}: unknown key `{k}`")));
            }
            if v.is_empty() {
                return Err(CliError::Config(format!("{origin}: empty value for `{k}`")));
            }
            if let Some(prev) = entries.iter().find(|e| e.key == k) {
                return Err(CliError::Config(format!("{origin}: `{k}` already set at {}", prev.origin)));
            }
            entries.push(Entry { key: k.into(), value: v.into(), origin });
        }
        Ok(Self { entries, base_dir: None })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut f = Self::parse(&text, &path.display().to_string())?;
        f.base_dir = path.parent().map(Path::to_path_buf);
        Ok(f)
    }

    /// Adds or replaces `key` with a command-line value.
    pub fn set(&mut self, key: &str, value: impl Into<String>, origin: &str) -> Result<(), CliError> {
        if !KEYS.contains(&key) {
            return Err(CliError::Config(format!("{origin}: unknown key `{key}`")));
        }
        let e = Entry { key: key.into(), value: value.into(), origin: origin.into() };
        match self.entries.iter_mut().find(|x| x.key == key) {
            Some(x) => *x = e,
            None => self.entries.push(e),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| CliError::Config(format!("{}: cannot parse `{}` for `{key}`", e.origin, e.value))),
        }
    }

    fn bad(&self, key: &str, what: &str) -> CliError {
        let e = self.get(key).expect("bad() called for a present key");
        CliError::Config(format!("{}: `{}` is not a valid {key} ({what})", e.origin, e.value))
    }

    /// Builds the run configuration and seed list.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let env = self.get("env").map(|e| e.value.as_str()).unwrap_or("vasicek");
        let mut run = match env {
            "vasicek" => RunConfig::vasicek(),
            "dam" => {
                let p: u8 = self.parsed("inflow")?.unwrap_or(1);
                RunConfig::dam(p).map_err(|_| self.bad("inflow", "expected 1, 2 or 3"))?
            }
            "bandit" => RunConfig::bandit(),
            "rates" => {
                let e = self.get("rates_csv").ok_or_else(|| CliError::Config("env = rates needs `rates_csv`".into()))?;
                let mut path = PathBuf::from(&e.value);
                if path.is_relative() {
                    if let Some(b) = &self.base_dir {
                        path = b.join(path);
                    }
                }
                let rates = read_rates_csv(&path).map_err(|err| CliError::Config(format!("{}: {err}", e.origin)))?;
                RunConfig::rates(rates.into_iter().map(|(_, r)| r).collect())
            }
            _ => return Err(self.bad("env", "expected vasicek, rates, dam or bandit")),
        };
        if env != "dam" && self.get("inflow").is_some() {
            return Err(CliError::Config(format!("{}: `inflow` only applies to env = dam", self.get("inflow").unwrap().origin)));
        }

        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = self.parsed($key)? {
                    $field = v;
                }
            };
        }
        set!("alpha", run.estimator.alpha);
        set!("beta", run.estimator.beta);
        set!("gamma", run.estimator.gamma);
        set!("omega", run.estimator.omega);
        set!("lambda", run.surrogate.lambda);
        set!("n_replays", run.surrogate.n_replays);
        set!("direct_iters", run.surrogate.direct_iters);
        set!("retrain_period", run.retrain_period);
        set!("epochs", run.epochs);
        set!("target_length", run.target_length);
        set!("learn_sigma", run.learn_sigma);
        set!("behavioral_log_sigma", run.behavioral_log_sigma);
        set!("target_log_sigma", run.target_log_sigma);
        set!("diagnostics_every", run.diagnostics_every);
        // the behavioral period follows the window unless set explicitly
        run.behavioral_length = self.parsed("behavioral_length")?.unwrap_or(run.estimator.alpha);

        if let Some(e) = self.get("bound") {
            run.surrogate.bound = BoundMethod::parse(&e.value).ok_or_else(|| self.bad("bound", "see `polis bounds-bench --help`"))?;
        }
        if let Some(e) = self.get("credit") {
            run.surrogate.credit = match e.value.as_str() {
                "same_step" => ReplayCredit::SameStep,
                "reward_to_go" => ReplayCredit::RewardToGo,
                _ => return Err(self.bad("credit", "expected same_step or reward_to_go")),
            };
        }
        if let Some(e) = self.get("objective") {
            run.objective = match e.value.as_str() {
                "full" => polis_core::objective::Terms::Full,
                "past_only" => polis_core::objective::Terms::PastOnly,
                _ => return Err(self.bad("objective", "expected full or past_only")),
            };
        }
        self.apply_architecture(&mut run)?;
        self.apply_env_details(&mut run)?;

        let seeds = match self.get("seeds") {
            Some(e) => parse_seeds(&e.value).map_err(|m| CliError::Config(format!("{}: {m}", e.origin)))?,
            None => vec![0],
        };
        run.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Resolved { run, seeds })
    }

    fn apply_architecture(&self, run: &mut RunConfig) -> Result<(), CliError> {
        if let Some(e) = self.get("architecture") {
            run.architecture = match e.value.as_str() {
                "tcn" => Architecture::default_tcn(),
                "sinusoid" => Architecture::Sinusoid,
                "stationary" => Architecture::Stationary,
                _ => return Err(self.bad("architecture", "expected tcn, sinusoid or stationary")),
            };
        }
        let tcn_keys = ["tcn_channels", "tcn_kernel", "encoding_dim", "encoding_base"];
        if let Architecture::Tcn { channels, kernel, encoding_dim, encoding_base } = &mut run.architecture {
            if let Some(e) = self.get("tcn_channels") {
                *channels = e
                    .value
                    .split(',')
                    .map(|c| c.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| self.bad("tcn_channels", "expected a comma-separated list of widths"))?;
            }
            if let Some(v) = self.parsed("tcn_kernel")? {
                *kernel = v;
            }
            if let Some(v) = self.parsed("encoding_dim")? {
                *encoding_dim = v;
            }
            if let Some(v) = self.parsed("encoding_base")? {
                *encoding_base = v;
            }
        } else if let Some(k) = tcn_keys.iter().find(|k| self.get(k).is_some()) {
            return Err(CliError::Config(format!("{}: `{k}` only applies to architecture = tcn", self.get(k).unwrap().origin)));
        }
        run.architecture.build(1).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    fn apply_env_details(&self, run: &mut RunConfig) -> Result<(), CliError> {
        let only = |key: &str, env: &str| -> Result<(), CliError> {
            match self.get(key) {
                Some(e) => Err(CliError::Config(format!("{}: `{key}` only applies to env = {env}", e.origin))),
                None => Ok(()),
            }
        };
        match &mut run.env {
            EnvConfig::Vasicek { fee, .. } | EnvConfig::Rates { fee, .. } => {
                if let Some(v) = self.parsed("fee")? {
                    *fee = v;
                }
                only("demand_penalty", "dam")?;
                for k in ["bandit_amplitude", "bandit_period", "bandit_noise"] {
                    only(k, "bandit")?;
                }
            }
            EnvConfig::Dam { penalty, .. } => {
                if let Some(e) = self.get("demand_penalty") {
                    *penalty = match e.value.as_str() {
                        "excess" | "as_paper" => DemandPenalty::Excess,
                        "deficit" => DemandPenalty::Deficit,
                        _ => return Err(self.bad("demand_penalty", "expected excess or deficit")),
                    };
                }
                only("fee", "vasicek or rates")?;
                for k in ["bandit_amplitude", "bandit_period", "bandit_noise"] {
                    only(k, "bandit")?;
                }
            }
            EnvConfig::Bandit { amplitude, frequency, noise } => {
                if let Some(v) = self.parsed("bandit_amplitude")? {
                    *amplitude = v;
                }
                if let Some(v) = self.parsed::<f64>("bandit_period")? {
                    if !(v > 0.0) {
                        return Err(self.bad("bandit_period", "must be positive"));
                    }
                    *frequency = 2.0 * std::f64::consts::PI / v;
                }
                if let Some(v) = self.parsed("bandit_noise")? {
                    *noise = v;
                }
                only("fee", "vasicek or rates")?;
                only("demand_penalty", "dam")?;
            }
        }
        if !matches!(run.env, EnvConfig::Rates { .. }) {
            only("rates_csv", "rates")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub run: RunConfig,
    pub seeds: Vec<u64>,
}

/// A count `3` (seeds `0, 1, 2`), a list `4,9` or a half-open range `5..10`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let s = s.trim();
    let seeds: Vec<u64> = if let Ok(n) = s.parse::<u64>() {
        (0..n).collect()
    } else if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range `{s}`"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range `{s}`"))?;
        (a..b).collect()
    } else {
        s.split(',')
            .filter(|x| !x.trim().is_empty())
            .map(|x| x.trim().parse().map_err(|_| format!("bad seed `{x}`")))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err("the seed list is empty".into());
    }
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err("the seed list repeats a seed".into());
    }
    Ok(seeds)
}
