//! Transition counts, empirical kernels and the L1 confidence region around
//! them.

use crate::error::{Error, Result};
use crate::kernel::TransitionKernel;

/// One observed transition `(arm, s, a, s')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Observation {
    pub arm: usize,
    pub state: usize,
    pub action: usize,
    pub next: usize,
}

impl Observation {
    pub fn new(arm: usize, state: usize, action: usize, next: usize) -> Self {
        Self {
            arm,
            state,
            action,
            next,
        }
    }
}

/// `N_i(s, a, s')` for every arm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionCounts {
    num_arms: usize,
    num_states: usize,
    num_actions: usize,
    counts: Vec<u64>,
}

impl TransitionCounts {
    pub fn new(num_arms: usize, num_states: usize, num_actions: usize) -> Self {
        Self {
            num_arms,
            num_states,
            num_actions,
            counts: vec![0; num_arms * num_states * num_actions * num_states],
        }
    }

    #[inline]
    fn offset(&self, arm: usize, s: usize, a: usize) -> usize {
        ((arm * self.num_states + s) * self.num_actions + a) * self.num_states
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, arm: usize, s: usize, a: usize, next: usize) -> u64 {
        self.counts[self.offset(arm, s, a) + next]
    }

    /// Row total `N_i(s, a)`.
    pub fn total(&self, arm: usize, s: usize, a: usize) -> u64 {
        let o = self.offset(arm, s, a);
        self.counts[o..o + self.num_states].iter().sum()
    }

    fn check(&self, obs: &Observation) -> Result<()> {
        if obs.arm >= self.num_arms
            || obs.state >= self.num_states
            || obs.next >= self.num_states
            || obs.action >= self.num_actions
        {
            return Err(Error::InvalidInput(format!(
                "observation {obs:?} out of range for {} arms, {} states, {} actions",
                self.num_arms, self.num_states, self.num_actions
            )));
        }
        Ok(())
    }

    /// Adds one count per observation. The batch is validated up front, so
    /// on error nothing is recorded.
    pub fn record(&mut self, observations: &[Observation]) -> Result<()> {
        for obs in observations {
            self.check(obs)?;
        }
        for obs in observations {
            let o = self.offset(obs.arm, obs.state, obs.action);
            self.counts[o + obs.next] += 1;
        }
        Ok(())
    }

    /// Empirical kernel of one arm; unvisited rows are uniform.
    pub fn empirical_kernel(&self, arm: usize) -> TransitionKernel {
        let ns = self.num_states;
        let mut probs = Vec::with_capacity(ns * self.num_actions * ns);
        for s in 0..ns {
            for a in 0..self.num_actions {
                let n = self.total(arm, s, a);
                let o = self.offset(arm, s, a);
                if n == 0 {
                    probs.extend(std::iter::repeat_n(1.0 / ns as f64, ns));
                } else {
                    probs.extend(self.counts[o..o + ns].iter().map(|&c| c as f64 / n as f64));
                }
            }
        }
        TransitionKernel::new(ns, self.num_actions, probs).expect("empirical rows are distributions")
    }
}

/// L1 radius `sqrt(2|S| ln(2|S||A| N t^4 / delta) / max(1, n))`.
pub fn confidence_radius(
    num_states: usize,
    num_actions: usize,
    num_arms: usize,
    episode: u64,
    delta: f64,
    visits: u64,
) -> f64 {
    let s = num_states as f64;
    let t = episode as f64;
    let inner = 2.0 * s * num_actions as f64 * num_arms as f64 * t.powi(4) / delta;
    (2.0 * s * inner.ln() / (visits.max(1) as f64)).sqrt()
}

/// The confidence region at one episode: per-arm empirical kernels and
/// per-(s, a) L1 radii.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceRegion {
    pub centers: Vec<TransitionKernel>,
    /// `radii[arm][s * num_actions + a]`.
    pub radii: Vec<Vec<f64>>,
    pub episode: u64,
    pub delta: f64,
}

/// One arm's slice of a confidence region.
#[derive(Debug, Clone, Copy)]
pub struct ArmBall<'a> {
    pub center: &'a TransitionKernel,
    pub radii: &'a [f64],
}

impl ArmBall<'_> {
    #[inline]
    pub fn radius(&self, s: usize, a: usize) -> f64 {
        self.radii[s * self.center.num_actions() + a]
    }

    /// Whether `kernel` lies in this arm's ball.
    pub fn contains(&self, kernel: &TransitionKernel) -> bool {
        let c = self.center;
        if kernel.num_states() != c.num_states() || kernel.num_actions() != c.num_actions() {
            return false;
        }
        for s in 0..c.num_states() {
            for a in 0..c.num_actions() {
                let l1: f64 = kernel
                    .row(s, a)
                    .iter()
                    .zip(c.row(s, a))
                    .map(|(p, q)| (p - q).abs())
                    .sum();
                // slack absorbs rounding in rows built exactly on the boundary
                if l1 > self.radius(s, a) + 1e-12 {
                    return false;
                }
            }
        }
        true
    }
}

impl ConfidenceRegion {
    pub fn arm(&self, i: usize) -> ArmBall<'_> {
        ArmBall {
            center: &self.centers[i],
            radii: &self.radii[i],
        }
    }

    pub fn num_arms(&self) -> usize {
        self.centers.len()
    }

    /// Every radius replaced by zero: the region collapses to its centers.
    pub fn collapsed(centers: Vec<TransitionKernel>, episode: u64, delta: f64) -> Self {
        let radii = centers
            .iter()
            .map(|k| vec![0.0; k.num_states() * k.num_actions()])
            .collect();
        Self {
            centers,
            radii,
            episode,
            delta,
        }
    }
}

/// Builds the region at episode `t` from the counts gathered so far.
pub fn build_region(counts: &TransitionCounts, t: u64, delta: f64) -> Result<ConfidenceRegion> {
    if t == 0 {
        return Err(Error::InvalidInput("episode index starts at 1".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidInput(format!("delta {delta} must lie in (0, 1]")));
    }
    let (n, ns, na) = (counts.num_arms(), counts.num_states(), counts.num_actions());
    let centers = (0..n).map(|i| counts.empirical_kernel(i)).collect();
    let radii = (0..n)
        .map(|i| {
            (0..ns)
                .flat_map(|s| (0..na).map(move |a| (s, a)))
                .map(|(s, a)| confidence_radius(ns, na, n, t, delta, counts.total(i, s, a)))
                .collect()
        })
        .collect();
    Ok(ConfidenceRegion {
        centers,
        radii,
        episode: t,
        delta,
    })
}

/// Whether every arm's kernel lies in its ball.
pub fn contains(region: &ConfidenceRegion, kernels: &[TransitionKernel]) -> bool {
    kernels.len() == region.num_arms()
        && kernels
            .iter()
            .enumerate()
            .all(|(i, k)| region.arm(i).contains(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn empty_batch_is_a_no_op() {
        let mut c = TransitionCounts::new(2, 2, 2);
        let before = c.clone();
        c.record(&[]).unwrap();
        assert_eq!(c, before);
    }

    #[test]
    fn counting_example() {
        let mut c = TransitionCounts::new(1, 2, 2);
        let mut obs = vec![Observation::new(0, 0, 1, 1); 3];
        obs.push(Observation::new(0, 0, 1, 0));
        c.record(&obs).unwrap();
        assert_eq!(c.get(0, 0, 1, 1), 3);
        assert_eq!(c.total(0, 0, 1), 4);
        let region = build_region(&c, 1, 0.05).unwrap();
        assert_eq!(region.centers[0].prob(0, 1, 1), 0.75);
        // unvisited rows stay uniform
        assert_eq!(region.centers[0].row(1, 0), &[0.5, 0.5]);
    }

    #[test]
    fn rejects_out_of_range_atomically() {
        let mut c = TransitionCounts::new(1, 2, 2);
        let obs = [Observation::new(0, 0, 0, 1), Observation::new(1, 0, 0, 0)];
        assert!(c.record(&obs).is_err());
        assert_eq!(c.total(0, 0, 0), 0);
        assert!(c.record(&[Observation::new(0, 0, 2, 0)]).is_err());
    }

    #[test]
    fn tally_matches_hash_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut c = TransitionCounts::new(4, 3, 2);
        let mut tally: HashMap<(usize, usize, usize), u64> = HashMap::new();
        let obs: Vec<_> = (0..10_000)
            .map(|_| {
                Observation::new(rng.gen_range(0..4), rng.gen_range(0..3), rng.gen_range(0..2), rng.gen_range(0..3))
            })
            .collect();
        for o in &obs {
            *tally.entry((o.arm, o.state, o.action)).or_default() += 1;
        }
        c.record(&obs).unwrap();
        for arm in 0..4 {
            for s in 0..3 {
                for a in 0..2 {
                    assert_eq!(c.total(arm, s, a), tally.get(&(arm, s, a)).copied().unwrap_or(0));
                }
            }
        }
    }

    #[test]
    fn zero_count_radius() {
        // sqrt(4 ln 8) from a 30-digit evaluation
        let d = confidence_radius(2, 2, 1, 1, 1.0, 0);
        assert!((d - 2.884_053_773_201_766).abs() < 1e-12, "{d}");
    }

    #[test]
    fn doubling_visits_scales_radius() {
        let a = confidence_radius(2, 2, 8, 3, 0.05, 10);
        let b = confidence_radius(2, 2, 8, 3, 0.05, 20);
        assert!((b - a / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn membership_examples() {
        let mut c = TransitionCounts::new(1, 2, 2);
        c.record(&[Observation::new(0, 1, 1, 1), Observation::new(0, 0, 0, 0)]).unwrap();
        let region = build_region(&c, 2, 0.05).unwrap();
        assert!(contains(&region, &region.centers));
        let flat = ConfidenceRegion::collapsed(region.centers.clone(), 2, 0.05);
        assert!(contains(&flat, &flat.centers));
        let other = TransitionKernel::binary([[0.0, 0.5], [0.5, 0.9]]).unwrap();
        assert!(!contains(&flat, &[other]));
    }

    proptest! {
        #[test]
        fn radius_monotone(visits in 0u64..10_000, t in 1u64..1000) {
            let d = confidence_radius(2, 2, 8, t, 0.05, visits);
            prop_assert!(confidence_radius(2, 2, 8, t, 0.05, visits + 1) <= d);
            prop_assert!(confidence_radius(2, 2, 8, t + 1, 0.05, visits) >= d);
        }

        #[test]
        fn region_matches_formula(seed in 0u64..1000, t in 1u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = TransitionCounts::new(3, 2, 2);
            let obs: Vec<_> = (0..rng.gen_range(0..200))
                .map(|_| Observation::new(rng.gen_range(0..3), rng.gen_range(0..2), rng.gen_range(0..2), rng.gen_range(0..2)))
                .collect();
            c.record(&obs).unwrap();
            let region = build_region(&c, t, 0.05).unwrap();
            prop_assert!(contains(&region, &region.centers));
            for arm in 0..3 {
                for s in 0..2 {
                    for a in 0..2 {
                        let n = c.total(arm, s, a).max(1) as f64;
                        let expect = (4.0 * (8.0 * 3.0 * (t as f64).powi(4) / 0.05).ln() / n).sqrt();
                        prop_assert!((region.arm(arm).radius(s, a) - expect).abs() < 1e-12);
                        let sum: f64 = region.centers[arm].row(s, a).iter().sum();
                        prop_assert!((sum - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
