//! Browser bindings for the interactive demo in `www/`. Every export takes
//! plain numbers and returns a JSON string; the `*_json` functions hold the
//! logic so they can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ucwhittle::confidence::ArmBall;
use ucwhittle::domains::{generate_thin, generate_wide, RmabInstance};
use ucwhittle::harness::simulate;
use ucwhittle::learners::{Algorithm, Learner, LearnerConfig};
use ucwhittle::optimism::{extreme_kernel, solve_p_m, solve_p_v};
use ucwhittle::whittle::search_interval;
use ucwhittle::{solve_penalized_mdp, whittle_index, RewardTable, TransitionKernel};

const TOL: f64 = 1e-9;

#[derive(Serialize)]
struct IndexCurve {
    penalties: Vec<f64>,
    /// `gaps[s][i]`: Q(s, pull) - Q(s, rest) at `penalties[i]`.
    gaps: Vec<Vec<f64>>,
    indices: Vec<f64>,
}

#[derive(Serialize)]
struct Member {
    label: &'static str,
    /// `[[p(0,0), p(0,1)], [p(1,0), p(1,1)]]` good-state probabilities.
    good: [[f64; 2]; 2],
    index: f64,
}

#[derive(Serialize)]
struct BallDemo {
    radius: f64,
    state: usize,
    members: Vec<Member>,
}

#[derive(Serialize)]
struct Curve {
    algorithm: String,
    cumulative_regret: Vec<f64>,
}

#[derive(Serialize)]
struct ExperimentDemo {
    episodes: usize,
    curves: Vec<Curve>,
}

fn kernel(good: [[f64; 2]; 2]) -> Result<TransitionKernel, String> {
    TransitionKernel::binary(good).map_err(|e| e.to_string())
}

fn good_of(k: &TransitionKernel) -> [[f64; 2]; 2] {
    [
        [k.good_prob(0, 0), k.good_prob(0, 1)],
        [k.good_prob(1, 0), k.good_prob(1, 1)],
    ]
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

/// Pull-minus-rest gap of both states over the penalty search interval,
/// plus the exact index of each state (where its gap crosses zero).
pub fn index_curve_json(good: [[f64; 2]; 2], gamma: f64, points: usize) -> Result<String, String> {
    let k = kernel(good)?;
    let rewards = RewardTable::state_valued(2, 2);
    let points = points.clamp(2, 2000);
    let (lo, hi) = search_interval(&rewards, gamma);
    let mut curve = IndexCurve {
        penalties: Vec::with_capacity(points),
        gaps: vec![Vec::new(), Vec::new()],
        indices: Vec::with_capacity(2),
    };
    for i in 0..points {
        let m = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let sol = solve_penalized_mdp(&k, &rewards, m, gamma, TOL).map_err(|e| e.to_string())?;
        curve.penalties.push(m);
        for s in 0..2 {
            curve.gaps[s].push(sol.gap(s));
        }
    }
    for s in 0..2 {
        let out = whittle_index(&k, &rewards, s, gamma, TOL, None).map_err(|e| e.to_string())?;
        curve.indices.push(out.value);
    }
    to_json(&curve)
}

/// Index of `state` under the center kernel and under the three optimistic
/// members of an L1 ball of the given radius around it.
pub fn ball_demo_json(good: [[f64; 2]; 2], radius: f64, state: usize, gamma: f64) -> Result<String, String> {
    let center = kernel(good)?;
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(format!("invalid radius {radius}"));
    }
    if state > 1 {
        return Err(format!("state {state} out of range"));
    }
    let rewards = RewardTable::state_valued(2, 2);
    let radii = [radius; 4];
    let ball = ArmBall {
        center: &center,
        radii: &radii,
    };
    let index_of = |k: &TransitionKernel| {
        whittle_index(k, &rewards, state, gamma, TOL, None)
            .map(|o| o.value)
            .map_err(|e| e.to_string())
    };
    let e = |e: ucwhittle::Error| e.to_string();

    let p_v = solve_p_v(ball, &rewards, 0.0, gamma, TOL).map_err(e)?.kernel;
    let (p_m, p_m_kernel) = solve_p_m(ball, &rewards, state, gamma, TOL, None).map_err(e)?;
    let extreme = extreme_kernel(ball).map_err(e)?;
    let members = vec![
        Member {
            label: "center",
            good: good_of(&center),
            index: index_of(&center)?,
        },
        Member {
            label: "value-optimistic",
            good: good_of(&p_v),
            index: index_of(&p_v)?,
        },
        Member {
            label: "index-optimistic",
            good: good_of(&p_m_kernel),
            index: p_m.value,
        },
        Member {
            label: "extreme",
            good: good_of(&extreme),
            index: index_of(&extreme)?,
        },
    ];
    to_json(&BallDemo { radius, state, members })
}

fn instance(domain: &str, arms: usize, budget: usize, seed: u64) -> Result<RmabInstance, String> {
    match domain {
        "wide" => generate_wide(arms, budget, seed),
        "thin" => generate_thin(arms, budget, seed),
        other => return Err(format!("unknown domain `{other}`")),
    }
    .map_err(|e| e.to_string())
}

/// Cumulative regret of every learner against the oracle on one seed.
pub fn experiment_json(
    domain: &str,
    arms: usize,
    budget: usize,
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<String, String> {
    if arms > 50 || horizon > 100 || episodes > 200 {
        return Err("demo limits: N <= 50, H <= 100, T <= 200".into());
    }
    let inst = instance(domain, arms, budget, seed)?;
    let gamma = 0.9;
    let cfg = LearnerConfig {
        seed,
        true_kernels: Some(inst.kernels.clone()),
        ..LearnerConfig::new(arms, budget, horizon, inst.rewards.clone(), gamma)
    };
    let run = |alg: Algorithm| -> Result<Vec<f64>, String> {
        let mut learner = Learner::new(alg, cfg.clone()).map_err(|e| e.to_string())?;
        simulate(&inst, &mut learner, episodes, horizon, gamma, seed)
            .map(|t| t.rewards)
            .map_err(|e| e.to_string())
    };
    let oracle = run(Algorithm::Oracle)?;
    let mut curves = Vec::new();
    for alg in Algorithm::ALL.into_iter().filter(|a| *a != Algorithm::Oracle) {
        let rewards = run(alg)?;
        let mut total = 0.0;
        let cumulative_regret = oracle
            .iter()
            .zip(&rewards)
            .map(|(o, r)| {
                total += o - r;
                total
            })
            .collect();
        curves.push(Curve {
            algorithm: alg.name().to_string(),
            cumulative_regret,
        });
    }
    to_json(&ExperimentDemo { episodes, curves })
}

fn js<T>(r: Result<T, String>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn index_curve(p0_pass: f64, p0_act: f64, p1_pass: f64, p1_act: f64, gamma: f64, points: usize) -> Result<String, JsError> {
    js(index_curve_json([[p0_pass, p0_act], [p1_pass, p1_act]], gamma, points))
}

#[wasm_bindgen]
pub fn ball_demo(
    p0_pass: f64,
    p0_act: f64,
    p1_pass: f64,
    p1_act: f64,
    radius: f64,
    state: usize,
    gamma: f64,
) -> Result<String, JsError> {
    js(ball_demo_json([[p0_pass, p0_act], [p1_pass, p1_act]], radius, state, gamma))
}

#[wasm_bindgen]
pub fn experiment(
    domain: &str,
    arms: usize,
    budget: usize,
    horizon: usize,
    episodes: usize,
    seed: u32,
) -> Result<String, JsError> {
    js(experiment_json(domain, arms, budget, horizon, episodes, seed as u64))
}
