//! Acceptance suite. Runs every criterion in sequence (one test, so the
//! timing criterion is not disturbed by concurrent tests), prints a
//! PASS/FAIL line per criterion and fails if any criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ucwhittle::confidence::{build_region, contains, Observation, TransitionCounts};
use ucwhittle::domains::generate_wide;
use ucwhittle::harness::{
    budget_impact_table, run_experiment, simulate, sum_of_sqrt_bound, write_outputs, ExperimentConfig,
};
use ucwhittle::learners::{Algorithm, Learner, LearnerConfig};
use ucwhittle::optimism::{l1_optimistic_row, solve_p_v};
use ucwhittle::{solve_penalized_mdp, whittle_index, RewardTable};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn wide8_config() -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../cli/examples/wide8.cfg");
    ExperimentConfig::from_file(&path, &[]).expect("wide8.cfg parses")
}

fn rewards() -> RewardTable {
    RewardTable::state_valued(2, 2)
}

fn indifference() -> Verdict {
    let start = Instant::now();
    let inst = generate_wide(1000, 0, 2024).unwrap();
    let mut worst: f64 = 0.0;
    for k in &inst.kernels {
        for s in 0..2 {
            let m = whittle_index(k, &rewards(), s, 0.9, 1e-9, None).unwrap().value;
            let sol = solve_penalized_mdp(k, &rewards(), m, 0.9, 1e-9).unwrap();
            worst = worst.max((sol.q(s, 0) - sol.q(s, 1)).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-3 && secs < 30.0,
        format!("max |Q(s,0) - Q(s,1)| = {worst:.2e} over 2000 indices in {secs:.2}s"),
    )
}

/// Solves a small dense system; `None` when singular.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Maximum of `p . values` over the simplex intersected with the L1 ball,
/// by enumerating every vertex: the equality `sum p = 1` plus `n - 1`
/// active constraints drawn from `p_i >= 0` and the ball facets
/// `sum sigma_i (p_i - c_i) <= r`.
fn vertex_max(center: &[f64], radius: f64, values: &[f64]) -> f64 {
    let n = center.len();
    let mut cons: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..n {
        let mut row = vec![0.0; n];
        row[i] = -1.0;
        cons.push((row, 0.0));
    }
    for mask in 0..(1u32 << n) {
        let sigma: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
        let rhs = radius + sigma.iter().zip(center).map(|(s, c)| s * c).sum::<f64>();
        cons.push((sigma, rhs));
    }
    let feasible = |p: &[f64]| cons.iter().all(|(row, rhs)| row.iter().zip(p).map(|(a, x)| a * x).sum::<f64>() <= rhs + 1e-9);
    let mut best = f64::NEG_INFINITY;
    let mut pick = vec![0usize; n - 1];
    fn combos(start: usize, depth: usize, m: usize, pick: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if depth == pick.len() {
            out.push(pick.clone());
            return;
        }
        for i in start..m {
            pick[depth] = i;
            combos(i + 1, depth + 1, m, pick, out);
        }
    }
    let mut all = Vec::new();
    combos(0, 0, cons.len(), &mut pick, &mut all);
    for set in all {
        let mut a = vec![vec![1.0; n]];
        let mut b = vec![1.0];
        for &c in &set {
            a.push(cons[c].0.clone());
            b.push(cons[c].1);
        }
        if let Some(p) = solve_small(a, b) {
            if feasible(&p) {
                best = best.max(p.iter().zip(values).map(|(x, v)| x * v).sum());
            }
        }
    }
    best
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn inner_maximization() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let n = 2 + trial % 2;
        let center = random_simplex(&mut rng, n);
        let radius = rng.gen_range(0.0..2.5);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let row = l1_optimistic_row(&center, radius, &values);
        let got: f64 = row.iter().zip(&values).map(|(p, v)| p * v).sum();
        worst = worst.max((got - vertex_max(&center, radius, &values)).abs());
    }
    verdict(worst <= 1e-9, format!("max objective gap to vertex enumeration = {worst:.2e} over 1000 rows"))
}

fn optimism_dominance() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let truth = generate_wide(200, 0, 99).unwrap();
    let (mut covered, mut violations) = (0, 0);
    let mut worst = f64::INFINITY;
    for (i, p_star) in truth.kernels.iter().enumerate() {
        let mut counts = TransitionCounts::new(1, 2, 2);
        let mut obs = Vec::new();
        for s in 0..2 {
            for a in 0..2 {
                for _ in 0..rng.gen_range(0..60) {
                    obs.push(Observation::new(0, s, a, p_star.sample_next(s, a, rng.gen())));
                }
            }
        }
        counts.record(&obs).unwrap();
        let t = 1 + (i as u64 % 40);
        let region = build_region(&counts, t, 0.05).unwrap();
        if !contains(&region, std::slice::from_ref(p_star)) {
            continue;
        }
        covered += 1;
        let lambda = rng.gen_range(0.0..1.0);
        let opt = solve_p_v(region.arm(0), &rewards(), lambda, 0.9, 1e-9).unwrap();
        let exact = solve_penalized_mdp(p_star, &rewards(), lambda, 0.9, 1e-9).unwrap();
        for s in 0..2 {
            let margin = opt.solution.v[s] - exact.v[s];
            worst = worst.min(margin);
            if margin < -1e-6 {
                violations += 1;
            }
        }
    }
    verdict(
        violations == 0 && covered > 0,
        format!("{covered}/200 balls contain P*, {violations} violations, min V-dagger - V* = {worst:.2e}"),
    )
}

fn coverage() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for &t in &[1u64, 5, 20] {
        let mut outside = 0;
        for trial in 0..2000u64 {
            let p_star = &generate_wide(1, 0, t * 10_000 + trial).unwrap().kernels[0];
            let mut counts = TransitionCounts::new(1, 2, 2);
            let mut obs = Vec::new();
            for s in 0..2 {
                for a in 0..2 {
                    // visits grow with the episode index
                    for _ in 0..rng.gen_range(1..=10 * t) {
                        obs.push(Observation::new(0, s, a, p_star.sample_next(s, a, rng.gen())));
                    }
                }
            }
            counts.record(&obs).unwrap();
            let region = build_region(&counts, t, 0.05).unwrap();
            if !contains(&region, std::slice::from_ref(p_star)) {
                outside += 1;
            }
        }
        let frac = outside as f64 / 2000.0;
        worst = worst.max(frac);
        details.push(format!("t={t}: {frac:.4}"));
    }
    verdict(worst <= 0.05, format!("fraction outside B: {}", details.join(", ")))
}

fn budget_table() -> Verdict {
    let printed = [
        (1, 0.42, 0.211, 0.209),
        (2, 0.81, 0.423, 0.194),
        (3, 1.09, 0.634, 0.152),
        (4, 1.32, 0.845, 0.119),
        (5, 1.51, 1.056, 0.091),
        (6, 1.62, 1.268, 0.059),
        (7, 1.69, 1.479, 0.030),
        (8, 1.69, 1.690, 0.000),
    ];
    let rows = budget_impact_table(&[0.42, 0.39, 0.28, 0.23, 0.19, 0.11, 0.07, 0.0]).unwrap();
    let mut worst: f64 = 0.0;
    for (row, &(k, opt, rnd, gap)) in rows.iter().zip(&printed) {
        assert_eq!(row.budget, k);
        worst = worst
            .max((row.optimal - opt).abs())
            .max((row.random - rnd).abs())
            .max((row.gap_per_worker - gap).abs());
    }
    verdict(
        rows.len() == 8 && worst <= 1e-3,
        format!("max cell deviation = {worst:.4} over K=1..8"),
    )
}

fn regret_ordering() -> Verdict {
    let cfg = wide8_config();
    let start = Instant::now();
    let res = run_experiment(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let value = res.final_regret(Algorithm::UcwValue);
    let random = res.final_regret(Algorithm::Random);
    let extreme = res.final_regret(Algorithm::Extreme);
    let early = res.window_regret(Algorithm::UcwValue, 1, 10);
    let late = res.window_regret(Algorithm::UcwValue, 31, 40);
    let checks = [
        ("ucw-value < random", value < random),
        ("ucw-value <= extreme", value <= extreme),
        ("late < early", late < early),
        ("runtime < 600s", secs < 600.0),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        failed.is_empty() && res.failures.is_empty(),
        format!(
            "cumulative regret at T=40: ucw-value {value:.2}, random {random:.2}, extreme {extreme:.2}; \
             ucw-value per-episode regret 1-10 {early:.3}, 31-40 {late:.3}; {secs:.1}s{}",
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failed.join(", "))
            }
        ),
    )
}

fn runtime_ordering() -> Verdict {
    let cfg = ExperimentConfig {
        num_arms: 30,
        budget: 6,
        horizon: 20,
        episodes: 25,
        seeds: (0..5).collect(),
        serial_timing: true,
        algorithms: vec![Algorithm::UcwValue, Algorithm::UcwPenalty],
        ..ExperimentConfig::default()
    };
    let res = run_experiment(&cfg).unwrap();
    let total = |a: Algorithm| -> f64 { res.records_for(a).map(|r| r.seconds).sum() };
    let (value, penalty) = (total(Algorithm::UcwValue), total(Algorithm::UcwPenalty));
    let ratio = value / penalty;
    verdict(
        ratio >= 1.5,
        format!("500 steps x 5 seeds: ucw-value {value:.3}s, ucw-penalty {penalty:.3}s, ratio {ratio:.2}"),
    )
}

fn lemma() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut tightest: f64 = 0.0;
    for &h in &[1.0, 5.0, 20.0] {
        for _ in 0..10_000 {
            let len = rng.gen_range(1..=200);
            // mix of dense, sparse and saturated sequences
            let mode = rng.gen_range(0..3);
            let z: Vec<f64> = (0..len)
                .map(|_| match mode {
                    0 => rng.gen_range(0.0..=h),
                    1 => {
                        if rng.gen::<f64>() < 0.1 {
                            h
                        } else {
                            0.0
                        }
                    }
                    _ => h,
                })
                .collect();
            let (lhs, rhs) = sum_of_sqrt_bound(&z, h);
            tightest = tightest.max(lhs / rhs);
            if lhs > rhs {
                violations += 1;
            }
        }
    }
    verdict(
        violations == 0,
        format!("{violations} violations over 30000 sequences, max lhs/rhs = {tightest:.3}"),
    )
}

fn determinism() -> Verdict {
    let cfg = wide8_config();
    let base = std::env::temp_dir().join(format!("ucw-acceptance-{}", std::process::id()));
    let mut bodies = Vec::new();
    for run in 0..2 {
        let dir = base.join(run.to_string());
        let res = run_experiment(&cfg).unwrap();
        write_outputs(&res, &dir).unwrap();
        bodies.push(std::fs::read(dir.join("summary.csv")).unwrap());
    }
    let _ = std::fs::remove_dir_all(&base);
    let rows = String::from_utf8_lossy(&bodies[0]).lines().count() - 1;
    verdict(
        bodies[0] == bodies[1] && rows == 6 * 40,
        format!("summary.csv identical: {}, {rows} rows", bodies[0] == bodies[1]),
    )
}

fn degenerate_ball() -> Verdict {
    let mut mismatched = 0;
    let mut steps = 0;
    for seed in 0..10u64 {
        let inst = generate_wide(8, 3, 500 + seed).unwrap();
        let cfg = LearnerConfig {
            true_kernels: Some(inst.kernels.clone()),
            seed,
            ..LearnerConfig::new(8, 3, 20, inst.rewards.clone(), 0.9)
        };
        let run = |alg: Algorithm, pin: bool| {
            let mut l = Learner::new(alg, LearnerConfig { pin_region: pin, ..cfg.clone() }).unwrap();
            simulate(&inst, &mut l, 10, 20, 0.9, seed).unwrap().actions
        };
        let (pinned, oracle) = (run(Algorithm::UcwValue, true), run(Algorithm::Oracle, false));
        steps += oracle.len();
        mismatched += pinned.iter().zip(&oracle).filter(|(a, b)| a != b).count();
    }
    verdict(
        mismatched == 0,
        format!("{mismatched} of {steps} steps differ across 10 instances"),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("1 whittle indifference", indifference),
        ("2 inner maximization exactness", inner_maximization),
        ("3 optimism dominance", optimism_dominance),
        ("4 confidence coverage", coverage),
        ("5 budget table", budget_table),
        ("6 regret ordering", regret_ordering),
        ("7 runtime ordering", runtime_ordering),
        ("8 sum-of-sqrt lemma", lemma),
        ("9 determinism", determinism),
        ("10 degenerate-ball equivalence", degenerate_ball),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        let v = check();
        let took: Duration = start.elapsed();
        println!(
            "{} criterion {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
        if !v.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn vertex_oracle_sanity() {
    // (0.5, 0.5) with radius 0.4 toward state 1 reaches (0.3, 0.7)
    assert!((vertex_max(&[0.5, 0.5], 0.4, &[0.0, 1.0]) - 0.7).abs() < 1e-12);
    assert!((vertex_max(&[0.2, 0.3, 0.5], 0.0, &[1.0, 2.0, 3.0]) - 2.3).abs() < 1e-12);
    assert!((vertex_max(&[0.2, 0.3, 0.5], 5.0, &[1.0, 2.0, 3.0]) - 3.0).abs() < 1e-12);
}
