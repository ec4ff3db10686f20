//! Penalized single-arm MDP: value iteration, policy evaluation and the
//! Lagrangian objective that couples arms through the pull penalty.

use crate::error::{Error, Result};
use crate::kernel::{RewardTable, TransitionKernel};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const MAX_SWEEPS: usize = 10_000;

/// Fixed point of the penalized Bellman operator
/// `Q(s,a) = -penalty * a + R(s,a) + gamma * sum_{s'} P(s,a,s') V(s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedSolution {
    pub v: Vec<f64>,
    /// Row-major `(state, action)`.
    pub q: Vec<f64>,
    pub policy: Vec<usize>,
    pub penalty: f64,
    pub gamma: f64,
    pub iterations: usize,
    num_actions: usize,
}

impl PenalizedSolution {
    #[inline]
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions + a]
    }

    /// `Q(s,1) - Q(s,0)`: the value of pulling over resting.
    #[inline]
    pub fn gap(&self, s: usize) -> f64 {
        self.q(s, 1) - self.q(s, 0)
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidInput(format!(
            "discount {gamma} must lie in (0, 1)"
        )));
    }
    Ok(())
}

pub(crate) fn check_problem(
    kernel: &TransitionKernel,
    rewards: &RewardTable,
    penalty: f64,
    gamma: f64,
    tol: f64,
) -> Result<()> {
    check_gamma(gamma)?;
    if !penalty.is_finite() {
        return Err(Error::InvalidInput(format!("penalty {penalty} is not finite")));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidInput(format!("tolerance {tol} must be positive")));
    }
    rewards.check_shape(kernel)
}

#[inline]
fn backup(
    kernel: &TransitionKernel,
    rewards: &RewardTable,
    penalty: f64,
    gamma: f64,
    s: usize,
    a: usize,
    v: &[f64],
) -> f64 {
    -penalty * a as f64 + rewards.get(s, a) + gamma * kernel.expect(s, a, v)
}

/// Index of the largest entry, preferring the lowest action on ties.
#[inline]
pub(crate) fn greedy_action(q_row: &[f64]) -> usize {
    let mut best = 0;
    for a in 1..q_row.len() {
        if q_row[a] > q_row[best] {
            best = a;
        }
    }
    best
}

/// Solves the penalized MDP by value iteration from zero.
pub fn solve_penalized_mdp(
    kernel: &TransitionKernel,
    rewards: &RewardTable,
    penalty: f64,
    gamma: f64,
    tol: f64,
) -> Result<PenalizedSolution> {
    solve_penalized_mdp_from(kernel, rewards, penalty, gamma, tol, None)
}

/// Value iteration starting from `warm` (zeros when `None`). The fixed point
/// does not depend on the start; only the sweep count does.
pub fn solve_penalized_mdp_from(
    kernel: &TransitionKernel,
    rewards: &RewardTable,
    penalty: f64,
    gamma: f64,
    tol: f64,
    warm: Option<&[f64]>,
) -> Result<PenalizedSolution> {
    check_problem(kernel, rewards, penalty, gamma, tol)?;
    let ns = kernel.num_states();
    let na = kernel.num_actions();
    let mut v = match warm {
        Some(w) if w.len() == ns && w.iter().all(|x| x.is_finite()) => w.to_vec(),
        Some(_) => return Err(Error::InvalidInput("warm start has wrong shape".into())),
        None => vec![0.0; ns],
    };
    let mut next = vec![0.0; ns];
    // sup-norm error of the iterate is at most gamma/(1-gamma) times the residual
    let stop = tol * (1.0 - gamma) / gamma;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < MAX_SWEEPS {
        iterations += 1;
        residual = 0.0;
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                best = best.max(backup(kernel, rewards, penalty, gamma, s, a, &v));
            }
            residual = residual.max((best - v[s]).abs());
            next[s] = best;
        }
        std::mem::swap(&mut v, &mut next);
        if residual <= stop {
            break;
        }
    }
    if residual > stop {
        return Err(Error::Convergence {
            iterations,
            residual,
        });
    }

    let mut q = vec![0.0; ns * na];
    let mut policy = vec![0; ns];
    for s in 0..ns {
        for a in 0..na {
            q[s * na + a] = backup(kernel, rewards, penalty, gamma, s, a, &v);
        }
        let row = &q[s * na..(s + 1) * na];
        policy[s] = greedy_action(row);
        v[s] = row[policy[s]];
    }
    Ok(PenalizedSolution {
        v,
        q,
        policy,
        penalty,
        gamma,
        iterations,
        num_actions: na,
    })
}

/// Value of a fixed deterministic policy, by a direct linear solve of
/// `(I - gamma P_pi) v = r_pi - penalty * pi`.
pub fn evaluate_policy(
    kernel: &TransitionKernel,
    rewards: &RewardTable,
    policy: &[usize],
    penalty: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    check_problem(kernel, rewards, penalty, gamma, DEFAULT_TOL)?;
    let n = kernel.num_states();
    if policy.len() != n {
        return Err(Error::InvalidInput(format!(
            "policy covers {} states, kernel has {n}",
            policy.len()
        )));
    }
    if let Some(&a) = policy.iter().find(|&&a| a >= kernel.num_actions()) {
        return Err(Error::InvalidInput(format!("illegal action {a}")));
    }
    let mut mat = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for s in 0..n {
        let a = policy[s];
        for (next, p) in kernel.row(s, a).iter().enumerate() {
            mat[s * n + next] = -gamma * p;
        }
        mat[s * n + s] += 1.0;
        rhs[s] = rewards.get(s, a) - penalty * a as f64;
    }
    solve_dense(&mut mat, &mut rhs, n)?;
    Ok(rhs)
}

/// Gaussian elimination with partial pivoting; the solution overwrites `rhs`.
pub(crate) fn solve_dense(mat: &mut [f64], rhs: &mut [f64], n: usize) -> Result<()> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| mat[i * n + col].abs().total_cmp(&mat[j * n + col].abs()))
            .expect("non-empty range");
        if mat[pivot * n + col].abs() < 1e-300 {
            return Err(Error::InvalidInput("singular policy system".into()));
        }
        if pivot != col {
            for k in 0..n {
                mat.swap(col * n + k, pivot * n + k);
            }
            rhs.swap(col, pivot);
        }
        let d = mat[col * n + col];
        for row in col + 1..n {
            let f = mat[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                mat[row * n + k] -= f * mat[col * n + k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= mat[row * n + k] * rhs[k];
        }
        rhs[row] = acc / mat[row * n + row];
    }
    Ok(())
}

/// Lagrangian objective of the relaxed problem: per-arm penalized values at
/// the initial states plus the constant `penalty * budget / (1 - gamma)`.
pub fn lagrangian_value(
    per_arm_values: &[Vec<f64>],
    initial_states: &[usize],
    penalty: f64,
    budget: usize,
    gamma: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    if per_arm_values.len() != initial_states.len() {
        return Err(Error::InvalidInput(format!(
            "{} value arrays for {} arms",
            per_arm_values.len(),
            initial_states.len()
        )));
    }
    let mut total = 0.0;
    for (values, &s) in per_arm_values.iter().zip(initial_states) {
        total += *values
            .get(s)
            .ok_or_else(|| Error::InvalidInput(format!("initial state {s} out of range")))?;
    }
    Ok(total + penalty * budget as f64 / (1.0 - gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::TransitionKernel;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flip_kernel() -> TransitionKernel {
        TransitionKernel::binary([[0.1, 0.9], [0.1, 0.9]]).unwrap()
    }

    fn random_kernel(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> TransitionKernel {
        let mut probs = Vec::new();
        for _ in 0..ns * na {
            let raw: Vec<f64> = (0..ns).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let sum: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|x| x / sum));
        }
        TransitionKernel::new(ns, na, probs).unwrap()
    }

    // Plain 500-sweep Bellman recursion, kept separate from the solver.
    fn oracle_q(k: &TransitionKernel, r: &RewardTable, pen: f64, g: f64) -> Vec<f64> {
        let ns = k.num_states();
        let na = k.num_actions();
        let mut v = vec![0.0; ns];
        let mut q = vec![0.0; ns * na];
        for _ in 0..500 {
            for s in 0..ns {
                for a in 0..na {
                    let ev: f64 = (0..ns).map(|t| k.prob(s, a, t) * v[t]).sum();
                    q[s * na + a] = -pen * a as f64 + r.get(s, a) + g * ev;
                }
            }
            for s in 0..ns {
                v[s] = q[s * na..(s + 1) * na].iter().cloned().fold(f64::MIN, f64::max);
            }
        }
        q
    }

    #[test]
    fn frozen_two_state_fixture() {
        // reference values from a 40-digit fixed-point recursion
        let r = RewardTable::state_valued(2, 2);
        let sol = solve_penalized_mdp(&flip_kernel(), &r, 0.3, 0.9, 1e-12).unwrap();
        let expect_v = [5.1, 6.1];
        let expect_q = [4.68, 5.1, 5.68, 6.1];
        for s in 0..2 {
            assert!((sol.v[s] - expect_v[s]).abs() < 1e-10);
        }
        for (got, want) in sol.q.iter().zip(expect_q) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        let oracle = oracle_q(&flip_kernel(), &r, 0.3, 0.9);
        for (got, want) in sol.q.iter().zip(oracle) {
            assert!((got - want).abs() < 1e-10);
        }
        assert_eq!(sol.policy, vec![1, 1]);
    }

    #[test]
    fn identical_actions_tie() {
        let k = TransitionKernel::binary([[0.3, 0.3], [0.8, 0.8]]).unwrap();
        let r = RewardTable::state_valued(2, 2);
        let sol = solve_penalized_mdp(&k, &r, 0.0, 0.9, 1e-9).unwrap();
        for s in 0..2 {
            assert_eq!(sol.q(s, 0), sol.q(s, 1));
            assert_eq!(sol.policy[s], 0, "ties go to the passive action");
        }
    }

    #[test]
    fn dominating_penalty_never_pulls() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = RewardTable::state_valued(3, 2);
        for _ in 0..50 {
            let k = random_kernel(&mut rng, 3, 2);
            let sol = solve_penalized_mdp(&k, &r, 2.0 * r.v_max(0.9), 0.9, 1e-9).unwrap();
            assert!(sol.policy.iter().all(|&a| a == 0));
        }
    }

    #[test]
    fn rejects_non_finite_and_bad_discount() {
        let r = RewardTable::state_valued(2, 2);
        let k = flip_kernel();
        assert!(solve_penalized_mdp(&k, &r, f64::NAN, 0.9, 1e-9).is_err());
        assert!(solve_penalized_mdp(&k, &r, 0.0, 1.0, 1e-9).is_err());
        assert!(solve_penalized_mdp(&k, &r, 0.0, 0.9, 0.0).is_err());
    }

    #[test]
    fn convergence_error_reports_residual() {
        let r = RewardTable::state_valued(2, 2);
        let err = solve_penalized_mdp(&flip_kernel(), &r, 0.0, 0.99999, 1e-15).unwrap_err();
        match err {
            Error::Convergence { iterations, residual } => {
                assert_eq!(iterations, MAX_SWEEPS);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn policy_evaluation_fixtures() {
        let r0 = RewardTable::new(2, 2, vec![0.0; 4]).unwrap();
        let v = evaluate_policy(&flip_kernel(), &r0, &[0, 0], 0.0, 0.9).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);

        let absorbing = TransitionKernel::binary([[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let r = RewardTable::state_valued(2, 2);
        let v = evaluate_policy(&absorbing, &r, &[0, 0], 0.0, 0.9).unwrap();
        assert!((v[1] - 10.0).abs() < 1e-12);
        assert_eq!(v[0], 0.0);

        assert!(evaluate_policy(&absorbing, &r, &[0, 2], 0.0, 0.9).is_err());
    }

    #[test]
    fn lagrangian_fixtures() {
        assert_eq!(lagrangian_value(&[vec![0.0], vec![0.0]], &[0, 0], 0.0, 1, 0.9).unwrap(), 0.0);
        let got = lagrangian_value(&[vec![3.0, 0.0], vec![0.0, 4.0]], &[0, 1], 0.5, 1, 0.9).unwrap();
        assert!((got - 12.0).abs() < 1e-12);
    }

    #[test]
    fn lagrangian_matches_rollouts() {
        // two arms, each following its own penalized-optimal policy
        let r = RewardTable::state_valued(2, 2);
        let kernels = [
            TransitionKernel::binary([[0.2, 0.7], [0.5, 0.9]]).unwrap(),
            TransitionKernel::binary([[0.1, 0.4], [0.6, 0.8]]).unwrap(),
        ];
        let (pen, g, budget) = (0.2, 0.9, 1);
        let init = [0usize, 1];
        let sols: Vec<_> = kernels
            .iter()
            .map(|k| solve_penalized_mdp(k, &r, pen, g, 1e-12).unwrap())
            .collect();
        let exact = lagrangian_value(
            &sols.iter().map(|s| s.v.clone()).collect::<Vec<_>>(),
            &init,
            pen,
            budget,
            g,
        )
        .unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rollouts = 100_000;
        let horizon = 200; // 0.9^200 ~ 7e-10
        let mut total = 0.0;
        let mut sq = 0.0;
        for _ in 0..rollouts {
            let mut states = init;
            let mut ret = 0.0;
            let mut disc = 1.0;
            for _ in 0..horizon {
                let mut pulls = 0.0;
                for i in 0..2 {
                    let a = sols[i].policy[states[i]];
                    ret += disc * r.get(states[i], a);
                    pulls += a as f64;
                    states[i] = kernels[i].sample_next(states[i], a, rng.gen());
                }
                ret += disc * pen * (budget as f64 - pulls);
                disc *= g;
            }
            total += ret;
            sq += ret * ret;
        }
        let mean = total / rollouts as f64;
        let se = ((sq / rollouts as f64 - mean * mean) / rollouts as f64).sqrt();
        assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} (se {se})");
    }

    fn residuals(k: &TransitionKernel, r: &RewardTable, pen: f64, g: f64, n: usize) -> Vec<f64> {
        let ns = k.num_states();
        let mut v = vec![0.0; ns];
        let mut out = Vec::new();
        for _ in 0..n {
            let next: Vec<f64> = (0..ns)
                .map(|s| {
                    (0..k.num_actions())
                        .map(|a| backup(k, r, pen, g, s, a, &v))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            out.push(next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            v = next;
        }
        out
    }

    proptest! {
        #[test]
        fn invariants_hold(seed in 0u64..10_000, pen in -5.0f64..5.0, ns in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = random_kernel(&mut rng, ns, 2);
            let r = RewardTable::state_valued(ns, 2);
            let g = 0.9;
            let tol = 1e-9;
            let sol = solve_penalized_mdp(&k, &r, pen, g, tol).unwrap();
            let bound = r.v_max(g) + pen.abs() / (1.0 - g);
            for s in 0..ns {
                let m = sol.q(s, 0).max(sol.q(s, 1));
                prop_assert!((sol.v[s] - m).abs() <= 1e-9);
                prop_assert!(sol.v[s].abs() <= bound + 1e-9);
                for a in 0..2 {
                    let b = backup(&k, &r, pen, g, s, a, &sol.v);
                    prop_assert!((sol.q(s, a) - b).abs() <= tol);
                }
            }
            let v = evaluate_policy(&k, &r, &sol.policy, pen, g).unwrap();
            for s in 0..ns {
                prop_assert!((v[s] - sol.v[s]).abs() <= 2.0 * tol);
            }
            let res = residuals(&k, &r, pen, g, 60);
            for w in res.windows(2) {
                prop_assert!(w[1] <= g * w[0] + 1e-12);
            }
        }

        #[test]
        fn pull_advantage_shrinks_with_penalty(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = random_kernel(&mut rng, 2, 2);
            let r = RewardTable::state_valued(2, 2);
            let mut prev = [f64::INFINITY; 2];
            for step in 0..=40 {
                let pen = -2.0 + 0.1 * step as f64;
                let sol = solve_penalized_mdp(&k, &r, pen, 0.9, 1e-11).unwrap();
                for s in 0..2 {
                    prop_assert!(sol.gap(s) <= prev[s] + 1e-9);
                    prev[s] = sol.gap(s);
                }
            }
        }
    }
}
