//! Episodic regret experiments.
//!
//! Every learner of a seed sees the same instance, the same initial states
//! and the same environment noise: for each `(seed, episode)` a dedicated
//! stream draws `H x N` uniforms in a fixed order, and next states come from
//! inverse-CDF sampling of those uniforms. Learners can then only differ
//! through their actions.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::confidence::Observation;
use crate::domains::{generate_thin, generate_wide, load_dataset, RmabInstance};
use crate::error::{Error, Result};
use crate::learners::{Algorithm, Learner, LearnerConfig};
use crate::mdp::check_gamma;
use crate::whittle::WhittleTable;

/// Stream offset separating environment noise from learner randomness.
const ENV_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Wide,
    Thin,
    Dataset { path: PathBuf, strict: bool },
}

impl DomainSpec {
    pub fn instance(&self, num_arms: usize, budget: usize, seed: u64) -> Result<RmabInstance> {
        match self {
            DomainSpec::Wide => generate_wide(num_arms, budget, seed),
            DomainSpec::Thin => generate_thin(num_arms, budget, seed),
            DomainSpec::Dataset { path, strict } => load_dataset(path, num_arms, budget, seed, *strict),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DomainSpec::Wide => "wide",
            DomainSpec::Thin => "thin",
            DomainSpec::Dataset { .. } => "dataset",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    pub num_arms: usize,
    pub budget: usize,
    pub horizon: usize,
    pub episodes: usize,
    pub gamma: f64,
    pub delta: f64,
    pub tol: f64,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    pub smoothing: f64,
    pub out_dir: Option<PathBuf>,
    /// Run everything on one thread so wall times are comparable.
    pub serial_timing: bool,
    pub epsilon_override: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            domain: DomainSpec::Wide,
            num_arms: 8,
            budget: 3,
            horizon: 20,
            episodes: 40,
            gamma: 0.9,
            delta: 0.05,
            tol: 1e-9,
            seeds: (0..30).collect(),
            algorithms: Algorithm::ALL.to_vec(),
            smoothing: 0.9,
            out_dir: None,
            serial_timing: false,
            epsilon_override: None,
        }
    }
}

/// `(section, canonical key, aliases)`.
const KEYS: &[(&str, &str, &[&str])] = &[
    ("experiment", "arms", &["N"]),
    ("experiment", "budget", &["K"]),
    ("experiment", "horizon", &["H"]),
    ("experiment", "episodes", &["T"]),
    ("experiment", "gamma", &[]),
    ("experiment", "delta", &[]),
    ("experiment", "tol", &[]),
    ("experiment", "seeds", &[]),
    ("experiment", "algorithms", &[]),
    ("experiment", "smoothing", &["weight"]),
    ("experiment", "serial_timing", &[]),
    ("experiment", "epsilon", &[]),
    ("domain", "name", &[]),
    ("domain", "path", &[]),
    ("domain", "strict", &[]),
    ("output", "dir", &[]),
];

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_err(key, format!("expected true or false, got `{value}`"))),
    }
}

/// `a..b` or a comma-separated list.
fn parse_seeds(key: &str, value: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = value.split_once("..") {
        let (a, b): (u64, u64) = (parse_num(key, a.trim())?, parse_num(key, b.trim())?);
        return Ok((a..b).collect());
    }
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s.trim()))
        .collect()
}

impl ExperimentConfig {
    /// Resolves `key` (bare, aliased or `section.key`) to its canonical
    /// `(section, key)`. `section` is the section the key appeared in.
    fn resolve(key: &str, section: Option<&str>) -> Result<(&'static str, &'static str)> {
        let (sec, bare) = match key.split_once('.') {
            Some((s, k)) => (Some(s), k),
            None => (section, key),
        };
        let hit = KEYS
            .iter()
            .find(|(s, k, aliases)| {
                (*k == bare || aliases.contains(&bare)) && sec.is_none_or(|x| x == *s)
            })
            .ok_or_else(|| config_err(key, "unknown key"))?;
        Ok((hit.0, hit.1))
    }

    /// Sets one key. Accepts `key`, an alias such as `T`, or `section.key`.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        self.apply_in(key, value, None)
    }

    fn apply_in(&mut self, key: &str, value: &str, section: Option<&str>) -> Result<()> {
        let value = value.trim();
        let (sec, canon) = Self::resolve(key.trim(), section)?;
        let key = key.trim();
        match (sec, canon) {
            (_, "arms") => self.num_arms = parse_num(key, value)?,
            (_, "budget") => self.budget = parse_num(key, value)?,
            (_, "horizon") => self.horizon = parse_num(key, value)?,
            (_, "episodes") => self.episodes = parse_num(key, value)?,
            (_, "gamma") => self.gamma = parse_num(key, value)?,
            (_, "delta") => self.delta = parse_num(key, value)?,
            (_, "tol") => self.tol = parse_num(key, value)?,
            (_, "seeds") => self.seeds = parse_seeds(key, value)?,
            (_, "algorithms") => {
                self.algorithms = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse::<Algorithm>().map_err(|e| config_err(key, e.to_string())))
                    .collect::<Result<_>>()?
            }
            (_, "smoothing") => self.smoothing = parse_num(key, value)?,
            (_, "serial_timing") => self.serial_timing = parse_bool(key, value)?,
            (_, "epsilon") => self.epsilon_override = Some(parse_num(key, value)?),
            (_, "name") => {
                self.domain = match value {
                    "wide" => DomainSpec::Wide,
                    "thin" => DomainSpec::Thin,
                    "dataset" => match &self.domain {
                        DomainSpec::Dataset { .. } => self.domain.clone(),
                        _ => DomainSpec::Dataset {
                            path: PathBuf::new(),
                            strict: true,
                        },
                    },
                    other => return Err(config_err(key, format!("unknown domain `{other}`"))),
                }
            }
            (_, "path") => match &mut self.domain {
                DomainSpec::Dataset { path, .. } => *path = PathBuf::from(value),
                _ => {
                    self.domain = DomainSpec::Dataset {
                        path: PathBuf::from(value),
                        strict: true,
                    }
                }
            },
            (_, "strict") => {
                let v = parse_bool(key, value)?;
                if let DomainSpec::Dataset { strict, .. } = &mut self.domain {
                    *strict = v;
                } else {
                    self.domain = DomainSpec::Dataset {
                        path: PathBuf::new(),
                        strict: v,
                    };
                }
            }
            (_, "dir") => self.out_dir = Some(PathBuf::from(value)),
            _ => return Err(config_err(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses `key = value` lines grouped under `[section]` headers. Lines
    /// starting with `#` or `;` are comments. Missing keys keep their
    /// defaults.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &[])
    }

    /// Parses and then applies `overrides` in order.
    pub fn parse_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split_once(" #").map_or(raw, |(l, _)| l).trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !KEYS.iter().any(|(s, _, _)| *s == name) {
                    return Err(config_err(name, format!("unknown section on line {}", idx + 1)));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(line, format!("line {} is not `key = value`", idx + 1)))?;
            cfg.apply_in(k, v, section.as_deref())?;
        }
        for (k, v) in overrides {
            cfg.apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse_with(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma).map_err(|e| config_err("gamma", e.to_string()))?;
        if self.horizon == 0 {
            return Err(config_err("horizon", "must be at least 1"));
        }
        if self.episodes == 0 {
            return Err(config_err("episodes", "must be at least 1"));
        }
        if self.budget > self.num_arms {
            return Err(config_err("budget", format!("exceeds {} arms", self.num_arms)));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(config_err("smoothing", "must lie in [0, 1)"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(config_err("delta", "must lie in (0, 1]"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(config_err("tol", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "no seeds"));
        }
        if self.algorithms.is_empty() {
            return Err(config_err("algorithms", "no algorithms"));
        }
        if let Some(e) = self.epsilon_override {
            if !(e > 0.0 && e <= 1.0) {
                return Err(config_err("epsilon", "must lie in (0, 1]"));
            }
        }
        if let DomainSpec::Dataset { path, .. } = &self.domain {
            if path.as_os_str().is_empty() {
                return Err(config_err("path", "dataset domain needs a path"));
            }
        }
        Ok(())
    }

    pub fn learner_config(&self, instance: &RmabInstance, seed: u64) -> LearnerConfig {
        LearnerConfig {
            delta: self.delta,
            tol: self.tol,
            seed,
            true_kernels: Some(instance.kernels.clone()),
            ..LearnerConfig::new(
                instance.num_arms(),
                instance.budget,
                self.horizon,
                instance.rewards.clone(),
                self.gamma,
            )
        }
    }
}

/// The `H x N` uniforms driving episode `episode` of `seed`, row-major by
/// timestep.
pub fn episode_noise(seed: u64, episode: u64, horizon: usize, num_arms: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ENV_STREAM | episode);
    (0..horizon * num_arms).map(|_| rng.gen()).collect()
}

/// Rewards and actions of one learner run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Discounted reward per episode.
    pub rewards: Vec<f64>,
    /// Pulled arms per `(episode, step)`, flattened.
    pub actions: Vec<Vec<usize>>,
}

/// Runs `learner` for `episodes` episodes of `horizon` steps on `instance`.
pub fn simulate(
    instance: &RmabInstance,
    learner: &mut Learner,
    episodes: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
) -> Result<Trajectory> {
    let n = instance.num_arms();
    let mut out = Trajectory {
        rewards: Vec::with_capacity(episodes),
        actions: Vec::with_capacity(episodes * horizon),
    };
    let mut obs = Vec::with_capacity(n);
    let mut arm_rewards = vec![0.0; n];
    for t in 1..=episodes as u64 {
        let noise = episode_noise(seed, t, horizon, n);
        let mut states = instance.initial_states.clone();
        learner.begin_episode(&states, t)?;
        let mut total = 0.0;
        let mut discount = 1.0;
        for h in 0..horizon {
            let pulled = learner.act(&states, instance.budget)?;
            let actions = pulled.actions(n);
            obs.clear();
            let mut step_reward = 0.0;
            for i in 0..n {
                let (s, a) = (states[i], actions[i]);
                arm_rewards[i] = instance.rewards.get(s, a);
                step_reward += arm_rewards[i];
                let next = instance.kernels[i].sample_next(s, a, noise[h * n + i]);
                obs.push(Observation::new(i, s, a, next));
            }
            total += discount * step_reward;
            discount *= gamma;
            learner.observe(&obs, &arm_rewards)?;
            for o in &obs {
                states[o.arm] = o.next;
            }
            out.actions.push(pulled.pulled().to_vec());
        }
        learner.end_episode()?;
        out.rewards.push(total);
    }
    Ok(out)
}

/// One successful `(algorithm, seed)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rewards: Vec<f64>,
    pub oracle_rewards: Vec<f64>,
    pub seconds: f64,
}

impl RunRecord {
    pub fn regret(&self) -> Vec<f64> {
        self.oracle_rewards
            .iter()
            .zip(&self.rewards)
            .map(|(o, r)| o - r)
            .collect()
    }

    pub fn cumulative_regret(&self) -> Vec<f64> {
        self.regret()
            .into_iter()
            .scan(0.0, |acc, r| {
                *acc += r;
                Some(*acc)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub message: String,
}

/// Per-episode mean and standard error of cumulative regret across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub episode: usize,
    pub algorithm: Algorithm,
    pub mean: f64,
    pub stderr: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl ExperimentResult {
    pub fn records_for(&self, algorithm: Algorithm) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(move |r| r.algorithm == algorithm)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for &alg in &self.config.algorithms {
            let cums: Vec<Vec<f64>> = self.records_for(alg).map(|r| r.cumulative_regret()).collect();
            for ep in 0..self.config.episodes {
                let at: Vec<f64> = cums.iter().map(|c| c[ep]).collect();
                let (mean, stderr) = mean_stderr(&at);
                rows.push(SummaryRow {
                    episode: ep + 1,
                    algorithm: alg,
                    mean,
                    stderr,
                    runs: at.len(),
                });
            }
        }
        rows
    }

    /// Mean cumulative regret at the last episode.
    pub fn final_regret(&self, algorithm: Algorithm) -> f64 {
        let finals: Vec<f64> = self
            .records_for(algorithm)
            .map(|r| *r.cumulative_regret().last().unwrap_or(&0.0))
            .collect();
        mean_stderr(&finals).0
    }

    /// Mean per-episode regret over the 1-based inclusive episode range.
    pub fn window_regret(&self, algorithm: Algorithm, first: usize, last: usize) -> f64 {
        let xs: Vec<f64> = self
            .records_for(algorithm)
            .flat_map(|r| r.regret()[first - 1..last].to_vec())
            .collect();
        mean_stderr(&xs).0
    }

    /// Mean wall seconds per run.
    pub fn runtime(&self) -> Vec<(Algorithm, f64)> {
        self.config
            .algorithms
            .iter()
            .map(|&a| {
                let secs: Vec<f64> = self.records_for(a).map(|r| r.seconds).collect();
                (a, mean_stderr(&secs).0)
            })
            .collect()
    }
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> (Vec<RunRecord>, Vec<RunFailure>) {
    let fail_all = |message: String| {
        let failures = config
            .algorithms
            .iter()
            .map(|&algorithm| RunFailure {
                algorithm,
                seed,
                message: message.clone(),
            })
            .collect();
        (Vec::new(), failures)
    };
    let instance = match config.domain.instance(config.num_arms, config.budget, seed) {
        Ok(i) => i,
        Err(e) => return fail_all(format!("instance: {e}")),
    };
    let lcfg = config.learner_config(&instance, seed);
    let run = |alg: Algorithm| -> Result<(Trajectory, f64)> {
        let start = Instant::now();
        let mut learner = Learner::new(alg, lcfg.clone())?;
        let traj = simulate(&instance, &mut learner, config.episodes, config.horizon, config.gamma, seed)?;
        Ok((traj, start.elapsed().as_secs_f64()))
    };
    let (oracle, oracle_secs) = match run(Algorithm::Oracle) {
        Ok(x) => x,
        Err(e) => return fail_all(format!("oracle: {e}")),
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &alg in &config.algorithms {
        let outcome = if alg == Algorithm::Oracle {
            Ok((oracle.clone(), oracle_secs))
        } else {
            run(alg)
        };
        match outcome {
            Ok((traj, seconds)) => records.push(RunRecord {
                algorithm: alg,
                seed,
                rewards: traj.rewards,
                oracle_rewards: oracle.rewards.clone(),
                seconds,
            }),
            Err(e) => failures.push(RunFailure {
                algorithm: alg,
                seed,
                message: e.to_string(),
            }),
        }
    }
    (records, failures)
}

/// Runs every configured algorithm on every seed against the Oracle.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let per_seed: Vec<(Vec<RunRecord>, Vec<RunFailure>)> = run_seeds(config);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, f) in per_seed {
        records.extend(r);
        failures.extend(f);
    }
    for f in &failures {
        log::warn!("{} failed on seed {}: {}", f.algorithm, f.seed, f.message);
    }
    Ok(ExperimentResult {
        config: config.clone(),
        records,
        failures,
    })
}

#[cfg(feature = "parallel")]
fn run_seeds(config: &ExperimentConfig) -> Vec<(Vec<RunRecord>, Vec<RunFailure>)> {
    use rayon::prelude::*;
    if config.serial_timing {
        config.seeds.iter().map(|&s| run_seed(config, s)).collect()
    } else {
        config.seeds.par_iter().map(|&s| run_seed(config, s)).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn run_seeds(config: &ExperimentConfig) -> Vec<(Vec<RunRecord>, Vec<RunFailure>)> {
    config.seeds.iter().map(|&s| run_seed(config, s)).collect()
}

/// Exponential smoothing: `out[k] = weight * out[k-1] + (1 - weight) * in[k]`.
pub fn smooth(series: &[f64], weight: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&weight) {
        return Err(Error::InvalidInput(format!("smoothing weight {weight} outside [0, 1)")));
    }
    let mut out = Vec::with_capacity(series.len());
    for (k, &x) in series.iter().enumerate() {
        out.push(if k == 0 {
            x
        } else {
            weight * out[k - 1] + (1.0 - weight) * x
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetRow {
    pub budget: usize,
    pub optimal: f64,
    pub random: f64,
    pub gap_per_worker: f64,
}

/// Reward of pulling the top `K` indices versus `K` random arms, for every
/// `K` from 1 to the number of indices.
pub fn budget_impact_table(indices: &[f64]) -> Result<Vec<BudgetRow>> {
    if indices.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::InvalidInput("indices must be sorted descending".into()));
    }
    let n = indices.len();
    let mean = indices.iter().sum::<f64>() / n.max(1) as f64;
    Ok((1..=n)
        .map(|k| {
            let optimal: f64 = indices[..k].iter().sum();
            let random = k as f64 * mean;
            BudgetRow {
                budget: k,
                optimal,
                random,
                gap_per_worker: (optimal - random) / k as f64,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mixing {
    /// Some induced chain has second eigenvalue 0.
    OneStep,
    /// `omega2 < 1`; the horizon bound is finite.
    Geometric,
    /// Some induced chain is reducible or periodic.
    NonErgodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicityReport {
    pub omega2: f64,
    pub r: f64,
    pub epsilon: f64,
    pub h_required: Option<f64>,
    pub mixing: Mixing,
}

impl ErgodicityReport {
    /// Whether `horizon` meets the required horizon.
    pub fn horizon_ok(&self, horizon: usize) -> bool {
        match (self.mixing, self.h_required) {
            (Mixing::NonErgodic, _) => false,
            (_, Some(h)) => horizon as f64 >= h,
            (_, None) => true,
        }
    }

    pub fn render(&self, horizon: usize) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "omega2 = {}", self.omega2);
        let _ = writeln!(out, "r = {}", self.r);
        let _ = writeln!(out, "epsilon = {}", self.epsilon);
        match self.mixing {
            Mixing::NonErgodic => {
                let _ = writeln!(out, "status = FAIL: an induced chain is not ergodic (omega2 = 1)");
            }
            Mixing::OneStep => {
                let _ = writeln!(out, "h_required = {}", self.h_required.unwrap_or(0.0));
                let _ = writeln!(out, "status = ok: mixes in one step");
            }
            Mixing::Geometric => {
                let h = self.h_required.unwrap_or(0.0);
                let _ = writeln!(out, "h_required = {h}");
                if self.horizon_ok(horizon) {
                    let _ = writeln!(out, "status = ok: H = {horizon} >= {h:.3}");
                } else {
                    let _ = writeln!(out, "status = WARN: H = {horizon} below required {h:.3}");
                }
            }
        }
        out
    }
}

/// Mixing diagnostic over all deterministic single-arm policies of a
/// binary-state instance. For the induced chain with switch probabilities
/// `a = P(0->1)` and `b = P(1->0)` the second eigenvalue is `1 - a - b` and
/// the stationary law is `(b, a) / (a + b)`.
pub fn ergodicity_diagnostic(instance: &RmabInstance, epsilon_override: Option<f64>) -> Result<ErgodicityReport> {
    let mut omega2: f64 = 0.0;
    let mut r: f64 = 1.0;
    let mut ergodic = true;
    for k in &instance.kernels {
        if k.num_states() != 2 || k.num_actions() != 2 {
            return Err(Error::InvalidInput("diagnostic needs binary states and actions".into()));
        }
        for a0 in 0..2 {
            for a1 in 0..2 {
                let up = k.prob(0, a0, 1);
                let down = k.prob(1, a1, 0);
                let lam = (1.0 - up - down).abs();
                omega2 = omega2.max(lam);
                if up + down <= 0.0 || lam >= 1.0 - 1e-12 {
                    ergodic = false;
                    continue;
                }
                r = r.min(down.min(up) / (up + down));
            }
        }
    }
    if instance.kernels.is_empty() {
        r = 0.0;
    }
    let epsilon = epsilon_override.unwrap_or(r / 2.0);
    let (mixing, h_required) = if !ergodic || instance.kernels.is_empty() {
        (Mixing::NonErgodic, None)
    } else if omega2 == 0.0 {
        (Mixing::OneStep, Some(1.0))
    } else {
        let h = (2f64.sqrt() * epsilon.powf(1.5)).ln() / omega2.ln();
        (Mixing::Geometric, Some(h))
    };
    Ok(ErgodicityReport {
        omega2,
        r: if ergodic { r } else { 0.0 },
        epsilon,
        h_required,
        mixing,
    })
}

/// Checks `sum_t z_t / sqrt(Z_{t-1}) <= (sqrt(H+1) + 1) sqrt(Z_T)` with
/// `Z_t = max(1, z_1 + ... + z_t)`.
pub fn sum_of_sqrt_bound(z: &[f64], horizon: f64) -> (f64, f64) {
    let mut partial: f64 = 0.0;
    let mut lhs = 0.0;
    for &x in z {
        lhs += x / partial.max(1.0).sqrt();
        partial += x;
    }
    let rhs = ((horizon + 1.0).sqrt() + 1.0) * partial.max(1.0).sqrt();
    (lhs, rhs)
}

fn fmt_csv(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

/// Writes `regret_<algo>.csv`, `summary.csv`, `runtime.csv`,
/// `budget_table.csv` and `ergodicity.txt` into `dir`. The budget table and
/// diagnostic describe the first seed's instance.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let cfg = &result.config;
    let mut written = Vec::new();
    let mut write = |name: String, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        written.push(path);
        Ok(())
    };
    for &alg in &cfg.algorithms {
        let mut body = String::from("seed,episode,reward,oracle_reward,regret,smoothed_cum_regret\n");
        for rec in result.records_for(alg) {
            let regret = rec.regret();
            let smoothed = smooth(&rec.cumulative_regret(), cfg.smoothing)?;
            for ep in 0..rec.rewards.len() {
                fmt_csv(
                    &mut body,
                    &[
                        rec.seed.to_string(),
                        (ep + 1).to_string(),
                        rec.rewards[ep].to_string(),
                        rec.oracle_rewards[ep].to_string(),
                        regret[ep].to_string(),
                        smoothed[ep].to_string(),
                    ],
                );
            }
        }
        write(format!("regret_{}.csv", alg.name()), body)?;
    }
    let mut summary = String::from("episode,algo,mean,stderr\n");
    for row in result.summary() {
        fmt_csv(
            &mut summary,
            &[
                row.episode.to_string(),
                row.algorithm.name().to_string(),
                row.mean.to_string(),
                row.stderr.to_string(),
            ],
        );
    }
    write("summary.csv".into(), summary)?;
    let mut runtime = String::from("algo,mean_seconds\n");
    for (alg, secs) in result.runtime() {
        fmt_csv(&mut runtime, &[alg.name().to_string(), format!("{secs:.6}")]);
    }
    write("runtime.csv".into(), runtime)?;

    let seed = cfg.seeds[0];
    let instance = cfg.domain.instance(cfg.num_arms, cfg.budget, seed)?;
    let table = WhittleTable::compute(&instance.kernels, &instance.rewards, cfg.gamma, cfg.tol, "oracle")?;
    let mut indices = table.current(&instance.initial_states);
    indices.sort_by(|a, b| b.total_cmp(a));
    let mut budget = String::from("K,optimal,random,gap_per_worker\n");
    for row in budget_impact_table(&indices)? {
        fmt_csv(
            &mut budget,
            &[
                row.budget.to_string(),
                format!("{:.4}", row.optimal),
                format!("{:.4}", row.random),
                format!("{:.4}", row.gap_per_worker),
            ],
        );
    }
    write("budget_table.csv".into(), budget)?;
    let report = ergodicity_diagnostic(&instance, cfg.epsilon_override)?;
    write("ergodicity.txt".into(), report.render(cfg.horizon))?;
    Ok(written)
}
