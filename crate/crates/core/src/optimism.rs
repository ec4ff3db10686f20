//! Optimistic planning over L1 confidence balls.
//!
//! * [`solve_p_v`]: the member of the ball with the highest penalized value,
//!   by extended value iteration. Each backup replaces the transition row by
//!   the L1-ball member that maximizes the expected next value, which has a
//!   closed form ([`l1_optimistic_row`]).
//! * [`solve_p_m`]: the highest Whittle index attainable inside the ball, by
//!   bisection on the penalty with a gap-maximizing inner iteration.
//! * [`extreme_kernel`]: UCB on active rows and LCB on passive rows.

use crate::confidence::ArmBall;
use crate::error::{Error, Result};
use crate::kernel::{RewardTable, TransitionKernel, GOOD};
use crate::mdp::{check_problem, solve_dense, solve_penalized_mdp_from, PenalizedSolution, MAX_SWEEPS};
use crate::whittle::{bisect, search_interval, IndexOutcome};

/// An optimistic member of the ball together with its exact solution.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimisticSolution {
    pub kernel: TransitionKernel,
    pub solution: PenalizedSolution,
    pub penalty_used: f64,
}

/// States sorted by ascending value, ties by index.
fn ascending(values: &[f64]) -> Vec<usize> {
    let mut order = Vec::with_capacity(values.len());
    ascending_into(values, &mut order);
    order
}

fn ascending_into(values: &[f64], order: &mut Vec<usize>) {
    order.clear();
    order.extend(0..values.len());
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
}

/// Greedy L1 transfer with a precomputed ascending order: move up to half
/// the radius onto the last state of `order`, then take the same mass from
/// the front of `order`.
fn shift_mass(center: &[f64], radius: f64, order: &[usize], out: &mut [f64]) {
    out.copy_from_slice(center);
    let Some(&best) = order.last() else {
        return;
    };
    let add = (0.5 * radius).min(1.0 - out[best]).max(0.0);
    if add <= 0.0 {
        return;
    }
    out[best] += add;
    let mut excess = add;
    for &s in order {
        if s == best || excess <= 0.0 {
            break;
        }
        let take = out[s].min(excess);
        out[s] -= take;
        excess -= take;
    }
    if out[best] > 1.0 {
        out[best] = 1.0;
    }
}

/// `argmax_p p . values` over the simplex intersected with the L1 ball of
/// `radius` around `center`.
pub fn l1_optimistic_row(center: &[f64], radius: f64, values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; center.len()];
    shift_mass(center, radius, &ascending(values), &mut out);
    out
}

/// `argmin_p p . values` over the same set.
pub fn l1_pessimistic_row(center: &[f64], radius: f64, values: &[f64]) -> Vec<f64> {
    let mut order = ascending(values);
    order.reverse();
    let mut out = vec![0.0; center.len()];
    shift_mass(center, radius, &order, &mut out);
    out
}

fn check_ball(ball: &ArmBall<'_>, rewards: &RewardTable) -> Result<()> {
    let c = ball.center;
    if ball.radii.len() != c.num_states() * c.num_actions() {
        return Err(Error::InvalidInput("radius table does not match kernel".into()));
    }
    if let Some(r) = ball.radii.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::InvalidInput(format!("invalid radius {r}")));
    }
    rewards.check_shape(c)
}

/// Extended value iteration over the ball. The fixed point dominates the
/// value of every member of the ball at every state simultaneously.
pub fn solve_p_v(
    ball: ArmBall<'_>,
    rewards: &RewardTable,
    penalty: f64,
    gamma: f64,
    tol: f64,
) -> Result<OptimisticSolution> {
    check_problem(ball.center, rewards, penalty, gamma, tol)?;
    check_ball(&ball, rewards)?;
    let c = ball.center;
    let (ns, na) = (c.num_states(), c.num_actions());
    let mut v = vec![0.0; ns];
    let mut next = vec![0.0; ns];
    let mut row = vec![0.0; ns];
    let mut order = Vec::with_capacity(ns);
    let stop = tol * (1.0 - gamma) / gamma;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_SWEEPS {
        iterations += 1;
        ascending_into(&v, &mut order);
        residual = 0.0;
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                shift_mass(c.row(s, a), ball.radius(s, a), &order, &mut row);
                let ev: f64 = row.iter().zip(&v).map(|(p, x)| p * x).sum();
                best = best.max(-penalty * a as f64 + rewards.get(s, a) + gamma * ev);
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

    let order = ascending(&v);
    let mut kernel = c.clone();
    for s in 0..ns {
        for a in 0..na {
            shift_mass(c.row(s, a), ball.radius(s, a), &order, &mut row);
            kernel.set_row(s, a, &row);
        }
    }
    let solution = solve_penalized_mdp_from(&kernel, rewards, penalty, gamma, tol, Some(&v))?;
    Ok(OptimisticSolution {
        kernel,
        solution,
        penalty_used: penalty,
    })
}

/// Outcome of the gap maximization at one penalty.
struct GapProbe {
    pulls: bool,
    kernel: TransitionKernel,
    policy: Vec<usize>,
}

/// For fixed row directions (maximize or minimize `p . V` per row), iterates
/// the operator that puts every row at its directed extreme given the
/// current values and then backs up. For fixed directions this is a
/// contraction whose fixed point is the fixed point of the alternation
/// "rows given values, values given rows".
///
/// The gap at iterate `k` is within `2 gamma / (1 - gamma)` residuals of the
/// fixed-point gap, so the loop stops as soon as its sign is certain.
#[allow(clippy::too_many_arguments)]
fn directed_iteration(
    ball: &ArmBall<'_>,
    rewards: &RewardTable,
    state: usize,
    m: f64,
    gamma: f64,
    tol: f64,
    maximize: &[bool],
    v: &mut Vec<f64>,
) -> Result<GapProbe> {
    let c = ball.center;
    let (ns, na) = (c.num_states(), c.num_actions());
    let mut next = vec![0.0; ns];
    let mut rows = vec![vec![0.0; ns]; ns * na];
    let mut policy = vec![0; ns];
    let mut q_row = vec![0.0; na];
    let stop = tol * (1.0 - gamma) / gamma;
    let certify = 2.0 * gamma / (1.0 - gamma);
    let mut up = Vec::with_capacity(ns);
    let mut down = Vec::with_capacity(ns);
    let mut iterations = 0;
    loop {
        iterations += 1;
        ascending_into(v, &mut up);
        down.clear();
        down.extend(up.iter().rev());
        let mut residual: f64 = 0.0;
        let mut gap = 0.0;
        for s in 0..ns {
            for a in 0..na {
                let order = if maximize[s * na + a] { &up } else { &down };
                let row = &mut rows[s * na + a];
                shift_mass(c.row(s, a), ball.radius(s, a), order, row);
                let ev: f64 = row.iter().zip(v.iter()).map(|(p, x)| p * x).sum();
                q_row[a] = -m * a as f64 + rewards.get(s, a) + gamma * ev;
            }
            if s == state {
                gap = q_row[1] - q_row[0];
            }
            policy[s] = crate::mdp::greedy_action(&q_row);
            let best = q_row[policy[s]];
            residual = residual.max((best - v[s]).abs());
            next[s] = best;
        }
        std::mem::swap(v, &mut next);

        let err = certify * residual;
        let decided = if gap - err > 0.0 {
            Some(true)
        } else if gap + err < 0.0 {
            Some(false)
        } else if residual <= stop {
            Some(gap >= 0.0)
        } else {
            None
        };
        if let Some(pulls) = decided {
            let mut kernel = c.clone();
            for s in 0..ns {
                for a in 0..na {
                    kernel.set_row(s, a, &rows[s * na + a]);
                }
            }
            return Ok(GapProbe {
                pulls,
                kernel,
                policy,
            });
        }
        if iterations >= MAX_SWEEPS {
            return Err(Error::Convergence {
                iterations,
                residual,
            });
        }
    }
}

/// Sign of the sensitivity of `Q(state,1) - Q(state,0)` to each row's
/// expected next value, at kernel `kernel` under `policy`.
fn gap_directions(
    kernel: &TransitionKernel,
    policy: &[usize],
    state: usize,
    gamma: f64,
) -> Result<Vec<bool>> {
    let (ns, na) = (kernel.num_states(), kernel.num_actions());
    // w = (I - gamma P_pi)^-T (p(state,1) - p(state,0)): discounted visits
    // to each state, weighted by how pulling shifts the next-state mix
    let mut mat = vec![0.0; ns * ns];
    for x in 0..ns {
        for (y, p) in kernel.row(x, policy[x]).iter().enumerate() {
            mat[y * ns + x] = -gamma * p;
        }
        mat[x * ns + x] += 1.0;
    }
    let mut w: Vec<f64> = kernel
        .row(state, 1)
        .iter()
        .zip(kernel.row(state, 0))
        .map(|(a, b)| a - b)
        .collect();
    solve_dense(&mut mat, &mut w, ns)?;

    let mut maximize = vec![true; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let coeff = if s == state {
                let direct = if a == 1 { 1.0 } else { -1.0 };
                direct + if policy[s] == a { gamma * w[s] } else { 0.0 }
            } else {
                // same sign for both actions, so a policy switch at `s`
                // does not flip the preferred direction
                gamma * w[s]
            };
            maximize[s * na + a] = coeff >= 0.0;
        }
    }
    Ok(maximize)
}

/// Alternation cap for re-deriving row directions at one penalty.
const MAX_ALTERNATIONS: usize = 100;

/// Decides whether some member of the ball prefers pulling at `state` under
/// penalty `m`. Starts from the directions left by the previous probe;
/// after an infeasible verdict the directions are re-derived from the
/// gap's sensitivity and the iteration repeats until they are stable.
#[allow(clippy::too_many_arguments)]
fn probe_gap(
    ball: &ArmBall<'_>,
    rewards: &RewardTable,
    state: usize,
    m: f64,
    gamma: f64,
    tol: f64,
    v: &mut Vec<f64>,
    maximize: &mut Vec<bool>,
) -> Result<GapProbe> {
    let mut probe = directed_iteration(ball, rewards, state, m, gamma, tol, maximize, v)?;
    for _ in 0..MAX_ALTERNATIONS {
        if probe.pulls {
            break;
        }
        let next = gap_directions(&probe.kernel, &probe.policy, state, gamma)?;
        if next == *maximize {
            break;
        }
        *maximize = next;
        probe = directed_iteration(ball, rewards, state, m, gamma, tol, maximize, v)?;
    }
    Ok(probe)
}

/// Highest Whittle index of `state` over the ball, with the member that
/// attains it. `floor` enables the same early exit as
/// [`whittle_index`](crate::whittle::whittle_index).
pub fn solve_p_m(
    ball: ArmBall<'_>,
    rewards: &RewardTable,
    state: usize,
    gamma: f64,
    tol: f64,
    floor: Option<f64>,
) -> Result<(IndexOutcome, TransitionKernel)> {
    check_problem(ball.center, rewards, 0.0, gamma, tol)?;
    check_ball(&ball, rewards)?;
    if ball.center.num_actions() != 2 {
        return Err(Error::InvalidInput("whittle indices need binary actions".into()));
    }
    if state >= ball.center.num_states() {
        return Err(Error::InvalidInput(format!("state {state} out of range")));
    }
    let (ns, na) = (ball.center.num_states(), ball.center.num_actions());
    let mut v = vec![0.0; ns];
    let mut maximize = vec![true; ns * na];
    maximize[state * na] = false;
    let mut witness: Option<TransitionKernel> = None;
    let mut last: Option<TransitionKernel> = None;
    let out = bisect(state, search_interval(rewards, gamma), floor, |m| {
        let probe = probe_gap(&ball, rewards, state, m, gamma, tol, &mut v, &mut maximize)?;
        if probe.pulls {
            witness = Some(probe.kernel);
        } else {
            last = Some(probe.kernel);
        }
        Ok(probe.pulls)
    })?;
    let kernel = witness.or(last).unwrap_or_else(|| ball.center.clone());
    Ok((out, kernel))
}

/// ExtremeWhittle's kernel for a binary-state ball: the active row moves
/// its good-state probability up by half the radius, the passive row moves
/// it down, both clamped to `[0, 1]`.
pub fn extreme_kernel(ball: ArmBall<'_>) -> Result<TransitionKernel> {
    let c = ball.center;
    if c.num_states() != 2 || c.num_actions() != 2 {
        return Err(Error::InvalidInput(
            "extreme kernels are defined for binary states and actions".into(),
        ));
    }
    let mut good = [[0.0; 2]; 2];
    for (s, row) in good.iter_mut().enumerate() {
        row[1] = (c.prob(s, 1, GOOD) + 0.5 * ball.radius(s, 1)).min(1.0);
        row[0] = (c.prob(s, 0, GOOD) - 0.5 * ball.radius(s, 0)).max(0.0);
    }
    TransitionKernel::binary(good)
}
