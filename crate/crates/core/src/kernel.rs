//! Per-arm transition kernels and reward tables.

use crate::error::{Error, Result};

/// Row-sum tolerance for a valid kernel.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Index of the rewarding state in binary (bad/good) domains.
pub const GOOD: usize = 1;
/// Index of the non-rewarding state in binary domains.
pub const BAD: usize = 0;

/// Transition probabilities `P(s, a, s')` for a single arm, stored densely
/// in `(state, action, next_state)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TransitionKernel {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidKernel(
                "state and action counts must be positive".into(),
            ));
        }
        if probs.len() != num_states * num_actions * num_states {
            return Err(Error::InvalidKernel(format!(
                "expected {} entries, got {}",
                num_states * num_actions * num_states,
                probs.len()
            )));
        }
        let kernel = Self {
            num_states,
            num_actions,
            probs,
        };
        kernel.validate()?;
        Ok(kernel)
    }

    /// Builds a kernel from nested `[state][action][next_state]` rows.
    pub fn from_rows(rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        let num_states = rows.len();
        let num_actions = rows.first().map_or(0, |r| r.len());
        let mut probs = Vec::with_capacity(num_states * num_actions * num_states);
        for (s, per_action) in rows.iter().enumerate() {
            if per_action.len() != num_actions {
                return Err(Error::InvalidKernel(format!(
                    "state {s} has {} actions, expected {num_actions}",
                    per_action.len()
                )));
            }
            for row in per_action {
                if row.len() != num_states {
                    return Err(Error::InvalidKernel(format!(
                        "state {s} has a row of length {}, expected {num_states}",
                        row.len()
                    )));
                }
                probs.extend_from_slice(row);
            }
        }
        Self::new(num_states, num_actions, probs)
    }

    /// Binary-state, binary-action kernel from good-state probabilities
    /// `good[s][a] = P(s, a, good)`.
    pub fn binary(good: [[f64; 2]; 2]) -> Result<Self> {
        let mut probs = Vec::with_capacity(8);
        for row in good {
            for p in row {
                probs.push(1.0 - p);
                probs.push(p);
            }
        }
        Self::new(2, 2, probs)
    }

    /// Every row uniform over next states.
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_states as f64;
        Self {
            num_states,
            num_actions,
            probs: vec![p; num_states * num_actions * num_states],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let row = self.row(s, a);
                let mut sum = 0.0;
                for (next, &p) in row.iter().enumerate() {
                    if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                        return Err(Error::InvalidKernel(format!(
                            "P({s},{a},{next}) = {p} is not a probability"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidKernel(format!(
                        "row ({s},{a}) sums to {sum}"
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    fn offset(&self, s: usize, a: usize) -> usize {
        (s * self.num_actions + a) * self.num_states
    }

    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let o = self.offset(s, a);
        &self.probs[o..o + self.num_states]
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.probs[self.offset(s, a) + next]
    }

    /// Overwrites one row. The caller is responsible for passing a
    /// distribution; the kernel is not revalidated.
    pub(crate) fn set_row(&mut self, s: usize, a: usize, row: &[f64]) {
        let o = self.offset(s, a);
        self.probs[o..o + self.num_states].copy_from_slice(row);
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `P(s, a, good)` for binary domains.
    pub fn good_prob(&self, s: usize, a: usize) -> f64 {
        self.prob(s, a, GOOD)
    }

    /// Expected next-state value `sum_{s'} P(s,a,s') * values[s']`.
    #[inline]
    pub fn expect(&self, s: usize, a: usize, values: &[f64]) -> f64 {
        self.row(s, a).iter().zip(values).map(|(p, v)| p * v).sum()
    }

    /// Samples the next state by inverse CDF at `u` in `[0, 1)`.
    pub fn sample_next(&self, s: usize, a: usize, u: f64) -> usize {
        let row = self.row(s, a);
        let mut acc = 0.0;
        for (next, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return next;
            }
        }
        // u landed in the rounding slack of the last bucket
        row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
    }
}

/// Known reward `R(s, a)` shared across arms.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
    r_max: f64,
}

impl RewardTable {
    pub fn new(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::InvalidInput(format!(
                "reward table needs {} entries, got {}",
                num_states * num_actions,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite reward {bad}")));
        }
        let r_max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(Self {
            num_states,
            num_actions,
            values,
            r_max,
        })
    }

    /// `R(s, a) = s`: the reward convention of the good/bad domains.
    pub fn state_valued(num_states: usize, num_actions: usize) -> Self {
        let values = (0..num_states)
            .flat_map(|s| std::iter::repeat_n(s as f64, num_actions))
            .collect();
        Self::new(num_states, num_actions, values).expect("state-valued rewards are finite")
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Largest achievable discounted value magnitude, `r_max / (1 - gamma)`.
    pub fn v_max(&self, gamma: f64) -> f64 {
        self.r_max / (1.0 - gamma)
    }

    pub(crate) fn check_shape(&self, kernel: &TransitionKernel) -> Result<()> {
        if kernel.num_states() != self.num_states || kernel.num_actions() != self.num_actions {
            return Err(Error::InvalidInput(format!(
                "reward table is {}x{} but kernel is {}x{}",
                self.num_states,
                self.num_actions,
                kernel.num_states(),
                kernel.num_actions()
            )));
        }
        Ok(())
    }
}
