//! Whittle indices by bisection on the pull penalty, and the index policies
//! built on top of them (threshold rule, budgeted top-K selection).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::error::{Error, Result};
use crate::kernel::{RewardTable, TransitionKernel};
use crate::mdp::{check_problem, solve_penalized_mdp_from};

/// Bisection stops once the bracket is narrower than this.
pub const BISECTION_WIDTH: f64 = 1e-4;

/// Result of an index computation. A pruned result carries the upper
/// bracket at the moment the search was abandoned; the true index lies
/// below it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexOutcome {
    pub value: f64,
    pub pruned: bool,
}

/// Penalty search interval `[-V_max - 1, V_max + 1]`.
pub fn search_interval(rewards: &RewardTable, gamma: f64) -> (f64, f64) {
    let v_max = rewards.v_max(gamma);
    (-v_max - 1.0, v_max + 1.0)
}

/// Bisection over the penalty. `pulls(m)` reports whether pulling is still
/// at least as good as resting at penalty `m`; it must be monotone (true
/// below the index, false above). If `floor` is given and the upper
/// bracket drops below it, the search stops early with a pruned outcome.
pub(crate) fn bisect<F>(
    state: usize,
    interval: (f64, f64),
    floor: Option<f64>,
    mut pulls: F,
) -> Result<IndexOutcome>
where
    F: FnMut(f64) -> Result<bool>,
{
    let (lo0, hi0) = interval;
    let (mut lo, mut hi) = interval;
    let mut lo_moved = false;
    let mut hi_moved = false;
    while hi - lo >= BISECTION_WIDTH {
        if let Some(f) = floor {
            if hi < f {
                return Ok(IndexOutcome {
                    value: hi,
                    pruned: true,
                });
            }
        }
        let mid = 0.5 * (lo + hi);
        if pulls(mid)? {
            lo = mid;
            lo_moved = true;
        } else {
            hi = mid;
            hi_moved = true;
        }
    }
    // the endpoints are only probed when the search never left them
    if !lo_moved && !pulls(lo0)? {
        return Err(Error::Bracket {
            state,
            lower: lo0,
            upper: hi0,
            sign: -1.0,
        });
    }
    if !hi_moved && pulls(hi0)? {
        return Err(Error::Bracket {
            state,
            lower: lo0,
            upper: hi0,
            sign: 1.0,
        });
    }
    if let Some(f) = floor {
        if hi < f {
            return Ok(IndexOutcome {
                value: hi,
                pruned: true,
            });
        }
    }
    Ok(IndexOutcome {
        value: 0.5 * (lo + hi),
        pruned: false,
    })
}

/// Whittle index of `state`: the penalty on pulling at which the arm becomes
/// indifferent between pulling and resting. Each bisection step re-solves
/// the penalized MDP warm-started from the previous step's values.
pub fn whittle_index(
    kernel: &TransitionKernel,
    rewards: &RewardTable,
    state: usize,
    gamma: f64,
    tol: f64,
    floor: Option<f64>,
) -> Result<IndexOutcome> {
    check_problem(kernel, rewards, 0.0, gamma, tol)?;
    if kernel.num_actions() != 2 {
        return Err(Error::InvalidInput("whittle indices need binary actions".into()));
    }
    if state >= kernel.num_states() {
        return Err(Error::InvalidInput(format!("state {state} out of range")));
    }
    let mut warm: Option<Vec<f64>> = None;
    bisect(state, search_interval(rewards, gamma), floor, |m| {
        let sol = solve_penalized_mdp_from(kernel, rewards, m, gamma, tol, warm.as_deref())?;
        let pull = sol.gap(state) >= 0.0;
        warm = Some(sol.v);
        Ok(pull)
    })
}

/// Memo of exact (unpruned) index results keyed by a rounded digest of the
/// inputs and the state.
#[derive(Debug, Default, Clone)]
pub struct IndexMemoizer {
    map: HashMap<(Vec<i64>, usize), f64>,
    hits: u64,
    misses: u64,
}

/// Rounds each value to four decimals.
pub fn digest(values: impl IntoIterator<Item = f64>) -> Vec<i64> {
    values.into_iter().map(|x| (x * 1e4).round() as i64).collect()
}

impl IndexMemoizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, key: &[i64], state: usize) -> Option<f64> {
        // HashMap lookups need an owned tuple key
        let found = self.map.get(&(key.to_vec(), state)).copied();
        match found {
            Some(_) => self.hits += 1,
            None => self.misses += 1,
        }
        found
    }

    pub fn insert(&mut self, key: Vec<i64>, state: usize, value: f64) {
        self.map.insert((key, state), value);
    }

    /// Looks up `(key, state)`; on a miss runs `compute` and stores the
    /// result unless it was pruned.
    pub fn get_or_compute<F>(&mut self, key: Vec<i64>, state: usize, compute: F) -> Result<IndexOutcome>
    where
        F: FnOnce() -> Result<IndexOutcome>,
    {
        if let Some(value) = self.get(&key, state) {
            return Ok(IndexOutcome {
                value,
                pruned: false,
            });
        }
        let out = compute()?;
        if !out.pruned {
            self.insert(key, state, out.value);
        }
        Ok(out)
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Memoized `whittle_index` keyed on the kernel rounded to four decimals.
pub fn whittle_index_memo(
    memo: &mut IndexMemoizer,
    kernel: &TransitionKernel,
    rewards: &RewardTable,
    state: usize,
    gamma: f64,
    tol: f64,
    floor: Option<f64>,
) -> Result<IndexOutcome> {
    let key = digest(kernel.probs().iter().copied());
    memo.get_or_compute(key, state, || {
        whittle_index(kernel, rewards, state, gamma, tol, floor)
    })
}

/// Per-arm, per-state index values.
#[derive(Debug, Clone, PartialEq)]
pub struct WhittleTable {
    pub indices: Vec<Vec<f64>>,
    pub source: String,
}

impl WhittleTable {
    pub fn new(indices: Vec<Vec<f64>>, source: impl Into<String>) -> Self {
        Self {
            indices,
            source: source.into(),
        }
    }

    /// One value per arm, taken at that arm's state.
    pub fn current(&self, states: &[usize]) -> Vec<f64> {
        self.indices
            .iter()
            .zip(states)
            .map(|(row, &s)| row[s])
            .collect()
    }

    /// Exact table for a set of kernels.
    pub fn compute(
        kernels: &[TransitionKernel],
        rewards: &RewardTable,
        gamma: f64,
        tol: f64,
        source: impl Into<String>,
    ) -> Result<Self> {
        let indices = kernels
            .iter()
            .map(|k| {
                (0..k.num_states())
                    .map(|s| whittle_index(k, rewards, s, gamma, tol, None).map(|o| o.value))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(indices, source))
    }
}

/// Pull every arm whose current index is at least `penalty`.
pub fn threshold_policy(table: &WhittleTable, states: &[usize], penalty: f64) -> Vec<u8> {
    table
        .current(states)
        .into_iter()
        .map(|w| u8::from(w >= penalty))
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Ranked {
    value: f64,
    arm: usize,
}

// Greater = better: higher value, then lower arm id.
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| other.arm.cmp(&self.arm))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

/// Result of a lazy top-K scan.
#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    /// Selected arms in ascending id order.
    pub arms: Vec<usize>,
    /// Value reported for every arm (upper bounds for pruned arms).
    pub values: Vec<f64>,
    pub pruned: Vec<bool>,
}

/// Scans arms in id order, keeping the best `k` seen so far in a min-heap.
/// Once the heap is full its minimum is handed to `index_of` as a floor so
/// the index computation can stop as soon as the arm cannot be selected.
pub fn top_k_lazy<F>(num_arms: usize, k: usize, mut index_of: F) -> Result<TopK>
where
    F: FnMut(usize, Option<f64>) -> Result<IndexOutcome>,
{
    let k = k.min(num_arms);
    let mut heap: BinaryHeap<std::cmp::Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    let mut values = Vec::with_capacity(num_arms);
    let mut pruned = Vec::with_capacity(num_arms);
    for arm in 0..num_arms {
        let floor = if k > 0 && heap.len() == k {
            heap.peek().map(|r| r.0.value)
        } else if k == 0 {
            Some(f64::INFINITY)
        } else {
            None
        };
        let out = index_of(arm, floor)?;
        values.push(out.value);
        pruned.push(out.pruned);
        if out.pruned || k == 0 {
            continue;
        }
        let cand = Ranked {
            value: out.value,
            arm,
        };
        if heap.len() < k {
            heap.push(std::cmp::Reverse(cand));
        } else if cand > heap.peek().expect("full heap").0 {
            heap.pop();
            heap.push(std::cmp::Reverse(cand));
        }
    }
    let mut arms: Vec<usize> = heap.into_iter().map(|r| r.0.arm).collect();
    arms.sort_unstable();
    Ok(TopK {
        arms,
        values,
        pruned,
    })
}

/// The `k` arms with the largest current-state indices, ties to the lowest id.
pub fn top_k_pull(table: &WhittleTable, states: &[usize], k: usize) -> Vec<usize> {
    let current = table.current(states);
    top_k_lazy(current.len(), k, |arm, _| {
        Ok(IndexOutcome {
            value: current[arm],
            pruned: false,
        })
    })
    .expect("table lookups are infallible")
    .arms
}

/// The `k`-th largest of `values` (1-based); `NaN` when `k` is out of range.
pub fn kth_largest(values: &[f64], k: usize) -> f64 {
    if k == 0 || k > values.len() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    sorted[k - 1]
}

/// The `k`-th largest current-state index.
pub fn kth_largest_index(table: &WhittleTable, states: &[usize], k: usize) -> f64 {
    kth_largest(&table.current(states), k)
}
