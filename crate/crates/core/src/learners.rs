//! The online learners: UCWhittle with value optimism (`ucw-value`) or
//! index optimism (`ucw-penalty`), ExtremeWhittle, WIQL, Random and the
//! full-information Oracle, all driven through [`Learner`].

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::confidence::{build_region, ConfidenceRegion, Observation, TransitionCounts};
use crate::error::{Error, Result};
use crate::kernel::{RewardTable, TransitionKernel};
use crate::mdp::{check_gamma, DEFAULT_TOL};
use crate::optimism::{extreme_kernel, solve_p_m, solve_p_v};
use crate::whittle::{digest, top_k_lazy, whittle_index_memo, IndexMemoizer, IndexOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    UcwValue,
    UcwPenalty,
    Extreme,
    Wiql,
    Random,
    Oracle,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::UcwValue,
        Algorithm::UcwPenalty,
        Algorithm::Extreme,
        Algorithm::Wiql,
        Algorithm::Random,
        Algorithm::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::UcwValue => "ucw-value",
            Algorithm::UcwPenalty => "ucw-penalty",
            Algorithm::Extreme => "extreme",
            Algorithm::Wiql => "wiql",
            Algorithm::Random => "random",
            Algorithm::Oracle => "oracle",
        }
    }

    /// Whether the learner keeps a penalty updated from its indices.
    pub fn updates_penalty(self) -> bool {
        matches!(
            self,
            Algorithm::UcwValue | Algorithm::UcwPenalty | Algorithm::Extreme
        )
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown algorithm `{s}` (expected one of ucw-value, ucw-penalty, extreme, wiql, random, oracle)"
                ))
            })
    }
}

/// Arms pulled at one step, ascending and unique.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActionSet {
    pulled: Vec<usize>,
}

impl ActionSet {
    pub fn new(mut pulled: Vec<usize>, num_arms: usize, budget: usize) -> Result<Self> {
        pulled.sort_unstable();
        pulled.dedup();
        if pulled.len() > budget {
            return Err(Error::InvalidInput(format!(
                "{} pulls exceed budget {budget}",
                pulled.len()
            )));
        }
        if let Some(&bad) = pulled.iter().find(|&&a| a >= num_arms) {
            return Err(Error::InvalidInput(format!("arm {bad} out of range")));
        }
        Ok(Self { pulled })
    }

    pub fn pulled(&self) -> &[usize] {
        &self.pulled
    }

    pub fn len(&self) -> usize {
        self.pulled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulled.is_empty()
    }

    pub fn contains(&self, arm: usize) -> bool {
        self.pulled.binary_search(&arm).is_ok()
    }

    /// Per-arm 0/1 actions.
    pub fn actions(&self, num_arms: usize) -> Vec<usize> {
        let mut out = vec![0; num_arms];
        for &a in &self.pulled {
            out[a] = 1;
        }
        out
    }
}

/// Everything a learner needs besides its algorithm.
#[derive(Debug, Clone)]
pub struct LearnerConfig {
    pub num_arms: usize,
    pub num_states: usize,
    pub num_actions: usize,
    pub budget: usize,
    pub horizon: usize,
    pub rewards: RewardTable,
    pub gamma: f64,
    pub delta: f64,
    pub tol: f64,
    pub seed: u64,
    /// True kernels. Required by the Oracle and by `pin_region`.
    pub true_kernels: Option<Vec<TransitionKernel>>,
    /// Replace the confidence region by zero-radius balls at the true
    /// kernels.
    pub pin_region: bool,
    /// Fan per-arm planning out over threads.
    pub parallel: bool,
}

impl LearnerConfig {
    pub fn new(num_arms: usize, budget: usize, horizon: usize, rewards: RewardTable, gamma: f64) -> Self {
        Self {
            num_arms,
            num_states: rewards.num_states(),
            num_actions: rewards.num_actions(),
            budget,
            horizon,
            rewards,
            gamma,
            delta: 0.05,
            tol: DEFAULT_TOL,
            seed: 0,
            true_kernels: None,
            pin_region: false,
            parallel: false,
        }
    }
}

/// Tabular Q-learning state for WIQL.
#[derive(Debug, Clone)]
struct QTable {
    q: Vec<f64>,
    visits: Vec<u64>,
}

#[derive(Debug, Clone)]
enum Plan {
    None,
    /// Index = Whittle index of a planned kernel.
    Kernels(Vec<TransitionKernel>),
    /// Index = highest Whittle index over the ball.
    Region(ConfidenceRegion),
}

/// One learner run. Call [`begin_episode`](Learner::begin_episode), then
/// alternate [`act`](Learner::act) and [`observe`](Learner::observe), then
/// [`end_episode`](Learner::end_episode).
#[derive(Debug, Clone)]
pub struct Learner {
    algorithm: Algorithm,
    config: LearnerConfig,
    counts: TransitionCounts,
    penalty: f64,
    next_penalty: Option<f64>,
    memo: IndexMemoizer,
    rng: ChaCha8Rng,
    plan: Plan,
    /// Exact index per `(arm, state)` for the current plan.
    cache: Vec<Vec<Option<f64>>>,
    qtable: Option<QTable>,
    episode: u64,
    step: usize,
}

impl Learner {
    pub fn new(algorithm: Algorithm, config: LearnerConfig) -> Result<Self> {
        check_gamma(config.gamma)?;
        if config.budget > config.num_arms {
            return Err(Error::InvalidInput(format!(
                "budget {} exceeds {} arms",
                config.budget, config.num_arms
            )));
        }
        if config.rewards.num_states() != config.num_states
            || config.rewards.num_actions() != config.num_actions
        {
            return Err(Error::InvalidInput("reward table shape mismatch".into()));
        }
        let needs_truth = algorithm == Algorithm::Oracle || config.pin_region;
        match &config.true_kernels {
            Some(ks) => {
                if ks.len() != config.num_arms {
                    return Err(Error::InvalidInput(format!(
                        "{} true kernels for {} arms",
                        ks.len(),
                        config.num_arms
                    )));
                }
                for k in ks {
                    config.rewards.check_shape(k)?;
                }
            }
            None if needs_truth => {
                return Err(Error::InvalidInput(format!(
                    "{algorithm} needs the true kernels"
                )))
            }
            None => {}
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(algorithm.stream());
        let penalty = rng.gen::<f64>();
        let (n, ns, na) = (config.num_arms, config.num_states, config.num_actions);
        let qtable = (algorithm == Algorithm::Wiql).then(|| QTable {
            q: vec![0.0; n * ns * na],
            visits: vec![0; n * ns * na],
        });
        let plan = if algorithm == Algorithm::Oracle {
            Plan::Kernels(config.true_kernels.clone().expect("checked above"))
        } else {
            Plan::None
        };
        Ok(Self {
            algorithm,
            counts: TransitionCounts::new(n, ns, na),
            penalty,
            next_penalty: None,
            memo: IndexMemoizer::new(),
            rng,
            plan,
            cache: vec![vec![None; ns]; n],
            qtable,
            episode: 0,
            step: 0,
            config,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    /// Current penalty `lambda`.
    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn counts(&self) -> &TransitionCounts {
        &self.counts
    }

    pub fn memo(&self) -> &IndexMemoizer {
        &self.memo
    }

    /// Kernels planned for the current episode (index learners that plan on
    /// a single kernel per arm).
    pub fn planned_kernels(&self) -> Option<&[TransitionKernel]> {
        match &self.plan {
            Plan::Kernels(ks) => Some(ks),
            _ => None,
        }
    }

    fn region(&self, t: u64) -> Result<ConfidenceRegion> {
        if self.config.pin_region {
            let truth = self.config.true_kernels.clone().expect("checked in new");
            Ok(ConfidenceRegion::collapsed(truth, t, self.config.delta))
        } else {
            build_region(&self.counts, t, self.config.delta)
        }
    }

    fn plan_value(&self, region: &ConfidenceRegion) -> Result<Vec<TransitionKernel>> {
        let c = &self.config;
        let solve = |i: usize| {
            solve_p_v(region.arm(i), &c.rewards, self.penalty, c.gamma, c.tol).map(|s| s.kernel)
        };
        map_arms(region.num_arms(), c.parallel, solve)
    }

    /// Plans for episode `t` (1-based) starting from `initial_states`.
    pub fn begin_episode(&mut self, initial_states: &[usize], t: u64) -> Result<()> {
        if t == 0 {
            return Err(Error::InvalidInput("episode index starts at 1".into()));
        }
        self.check_states(initial_states)?;
        self.episode = t;
        self.step = 0;
        self.next_penalty = None;
        let fresh = match self.algorithm {
            Algorithm::UcwValue => {
                let region = self.region(t)?;
                Some(Plan::Kernels(self.plan_value(&region)?))
            }
            Algorithm::UcwPenalty => Some(Plan::Region(self.region(t)?)),
            Algorithm::Extreme => {
                let region = self.region(t)?;
                let ks = (0..region.num_arms())
                    .map(|i| extreme_kernel(region.arm(i)))
                    .collect::<Result<Vec<_>>>()?;
                Some(Plan::Kernels(ks))
            }
            Algorithm::Wiql | Algorithm::Random | Algorithm::Oracle => None,
        };
        if let Some(plan) = fresh {
            self.plan = plan;
            for row in &mut self.cache {
                row.fill(None);
            }
        }
        if self.algorithm.updates_penalty() && self.config.budget > 0 {
            let top = self.top_k(initial_states, self.config.budget)?;
            self.next_penalty = top
                .arms
                .iter()
                .map(|&a| top.values[a])
                .min_by(f64::total_cmp);
        }
        Ok(())
    }

    fn check_states(&self, states: &[usize]) -> Result<()> {
        if states.len() != self.config.num_arms {
            return Err(Error::InvalidInput(format!(
                "{} states for {} arms",
                states.len(),
                self.config.num_arms
            )));
        }
        if let Some(s) = states.iter().find(|&&s| s >= self.config.num_states) {
            return Err(Error::InvalidInput(format!("state {s} out of range")));
        }
        Ok(())
    }

    /// Index of `arm` at `state` under the current plan, exact unless
    /// pruned below `floor`.
    fn index(&mut self, arm: usize, state: usize, floor: Option<f64>) -> Result<IndexOutcome> {
        if let Some(value) = self.cache[arm][state] {
            return Ok(IndexOutcome {
                value,
                pruned: false,
            });
        }
        let c = &self.config;
        let out = match &self.plan {
            Plan::Kernels(ks) => whittle_index_memo(
                &mut self.memo,
                &ks[arm],
                &c.rewards,
                state,
                c.gamma,
                c.tol,
                floor,
            )?,
            Plan::Region(region) => {
                let ball = region.arm(arm);
                let key = digest(ball.center.probs().iter().chain(ball.radii).copied());
                self.memo.get_or_compute(key, state, || {
                    solve_p_m(ball, &c.rewards, state, c.gamma, c.tol, floor).map(|(o, _)| o)
                })?
            }
            Plan::None => {
                return Err(Error::InvalidInput(format!(
                    "{} has no plan; call begin_episode first",
                    self.algorithm
                )))
            }
        };
        if !out.pruned {
            self.cache[arm][state] = Some(out.value);
        }
        Ok(out)
    }

    fn top_k(&mut self, states: &[usize], budget: usize) -> Result<crate::whittle::TopK> {
        top_k_lazy(states.len(), budget, |arm, floor| self.index(arm, states[arm], floor))
    }

    /// Exact current-plan indices for every arm at `states` (no pruning).
    pub fn indices(&mut self, states: &[usize]) -> Result<Vec<f64>> {
        self.check_states(states)?;
        (0..states.len())
            .map(|arm| self.index(arm, states[arm], None).map(|o| o.value))
            .collect()
    }

    /// WIQL exploration rate at the current step.
    pub fn epsilon(&self) -> f64 {
        let n = self.config.num_arms as f64;
        n / (n + self.episode as f64 * self.config.horizon as f64 + self.step as f64)
    }

    fn q_gap(&self, arm: usize, s: usize) -> f64 {
        let q = &self.qtable.as_ref().expect("wiql").q;
        let na = self.config.num_actions;
        let o = (arm * self.config.num_states + s) * na;
        q[o + 1] - q[o]
    }

    /// Arms to pull at `states` under budget `budget`.
    pub fn act(&mut self, states: &[usize], budget: usize) -> Result<ActionSet> {
        self.check_states(states)?;
        let n = self.config.num_arms;
        let k = budget.min(n);
        let pulled = match self.algorithm {
            Algorithm::Random => sample(&mut self.rng, n, k).into_vec(),
            Algorithm::Wiql => {
                let explore = self.rng.gen::<f64>() < self.epsilon();
                if explore {
                    sample(&mut self.rng, n, k).into_vec()
                } else {
                    let gaps: Vec<f64> = (0..n).map(|i| self.q_gap(i, states[i])).collect();
                    top_k_lazy(n, k, |arm, _| {
                        Ok(IndexOutcome {
                            value: gaps[arm],
                            pruned: false,
                        })
                    })?
                    .arms
                }
            }
            _ => self.top_k(states, k)?.arms,
        };
        self.step += 1;
        ActionSet::new(pulled, n, budget)
    }

    /// Records one step of transitions and per-arm rewards.
    pub fn observe(&mut self, transitions: &[Observation], rewards: &[f64]) -> Result<()> {
        if transitions.is_empty() {
            return Ok(());
        }
        self.counts.record(transitions)?;
        let (ns, na, gamma) = (self.config.num_states, self.config.num_actions, self.config.gamma);
        if let Some(table) = &mut self.qtable {
            if rewards.len() != self.config.num_arms {
                return Err(Error::InvalidInput(format!(
                    "{} rewards for {} arms",
                    rewards.len(),
                    self.config.num_arms
                )));
            }
            for o in transitions {
                let next = (o.arm * ns + o.next) * na;
                let best = table.q[next..next + na]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
                let at = (o.arm * ns + o.state) * na + o.action;
                let alpha = 1.0 / (1.0 + table.visits[at] as f64);
                table.q[at] = (1.0 - alpha) * table.q[at] + alpha * (rewards[o.arm] + gamma * best);
                table.visits[at] += 1;
            }
        }
        Ok(())
    }

    /// Moves the penalty to the K-th largest index at the episode's initial
    /// states.
    pub fn end_episode(&mut self) -> Result<()> {
        if let Some(p) = self.next_penalty.take() {
            self.penalty = p;
        }
        Ok(())
    }

    #[cfg(test)]
    fn set_q(&mut self, arm: usize, s: usize, a: usize, value: f64) {
        let (ns, na) = (self.config.num_states, self.config.num_actions);
        self.qtable.as_mut().expect("wiql").q[(arm * ns + s) * na + a] = value;
    }
}

#[cfg(feature = "parallel")]
fn map_arms<T, F>(n: usize, parallel: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn map_arms<T, F>(n: usize, _parallel: bool, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T>,
{
    (0..n).map(f).collect()
}
