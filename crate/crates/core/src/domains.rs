//! RMAB instances: synthetic wide- and thin-margin generators and a loader
//! for per-arm transition tables stored as CSV.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{RewardTable, TransitionKernel, BAD, GOOD};

/// Header of the dataset CSV: `P(bad,0,good), P(bad,1,good),
/// P(good,0,good), P(good,1,good)`.
pub const DATASET_HEADER: &str = "p0_pass,p0_act,p1_pass,p1_act";

const REPAIR_ROUNDS: usize = 100;
const THIN_RANGE: (f64, f64) = (0.2, 0.4);

/// A full problem: true kernels, shared rewards, fixed initial states and
/// the per-step pull budget.
#[derive(Debug, Clone, PartialEq)]
pub struct RmabInstance {
    pub kernels: Vec<TransitionKernel>,
    pub rewards: RewardTable,
    pub initial_states: Vec<usize>,
    pub budget: usize,
}

impl RmabInstance {
    pub fn new(
        kernels: Vec<TransitionKernel>,
        rewards: RewardTable,
        initial_states: Vec<usize>,
        budget: usize,
    ) -> Result<Self> {
        if kernels.len() != initial_states.len() {
            return Err(Error::InvalidInput(format!(
                "{} kernels but {} initial states",
                kernels.len(),
                initial_states.len()
            )));
        }
        if budget > kernels.len() {
            return Err(Error::InvalidInput(format!(
                "budget {budget} exceeds {} arms",
                kernels.len()
            )));
        }
        for (i, (k, &s)) in kernels.iter().zip(&initial_states).enumerate() {
            k.validate()?;
            rewards.check_shape(k)?;
            if s >= k.num_states() {
                return Err(Error::InvalidInput(format!(
                    "arm {i} starts in state {s} of {}",
                    k.num_states()
                )));
            }
        }
        Ok(Self {
            kernels,
            rewards,
            initial_states,
            budget,
        })
    }

    pub fn num_arms(&self) -> usize {
        self.kernels.len()
    }
}

/// Good-state probabilities of a binary arm, `good[s][a]`.
pub type GoodProbs = [[f64; 2]; 2];

/// Whether acting helps in both states and starting good helps for both
/// actions.
pub fn satisfies_constraints(good: &GoodProbs) -> bool {
    (0..2).all(|s| good[s][1] >= good[s][0]) && (0..2).all(|a| good[GOOD][a] >= good[BAD][a])
}

pub fn good_probs(kernel: &TransitionKernel) -> GoodProbs {
    [
        [kernel.good_prob(BAD, 0), kernel.good_prob(BAD, 1)],
        [kernel.good_prob(GOOD, 0), kernel.good_prob(GOOD, 1)],
    ]
}

/// `value * eta` for uniform `eta`; with a floor, `eta` is redrawn until the
/// product clears it and the result is clamped after too many redraws.
fn shrink(rng: &mut ChaCha8Rng, value: f64, floor: Option<f64>) -> f64 {
    match floor {
        None => value * rng.gen::<f64>(),
        Some(f) => {
            for _ in 0..REPAIR_ROUNDS {
                let v = value * rng.gen::<f64>();
                if v >= f {
                    return v;
                }
            }
            f
        }
    }
}

/// Lowers offending entries until both validity constraints hold. Entries
/// only ever decrease, so the loop settles within a few rounds.
fn repair(rng: &mut ChaCha8Rng, good: &mut GoodProbs, floor: Option<f64>) {
    for _ in 0..REPAIR_ROUNDS {
        let mut changed = false;
        for s in 0..2 {
            if good[s][1] < good[s][0] {
                good[s][0] = shrink(rng, good[s][1], floor);
                changed = true;
            }
        }
        for a in 0..2 {
            if good[GOOD][a] < good[BAD][a] {
                good[BAD][a] = shrink(rng, good[GOOD][a], floor);
                changed = true;
            }
        }
        if !changed {
            return;
        }
    }
    // unreachable in practice; force the ordering p00 <= p01, p10 <= p11
    good[BAD][0] = good[BAD][0].min(good[BAD][1]).min(good[GOOD][0]);
    good[BAD][1] = good[BAD][1].min(good[GOOD][1]);
    good[GOOD][0] = good[GOOD][0].min(good[GOOD][1]);
}

fn generate(num_arms: usize, budget: usize, seed: u64, range: (f64, f64), floor: Option<f64>) -> Result<RmabInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kernels = Vec::with_capacity(num_arms);
    for _ in 0..num_arms {
        let mut good = [[0.0; 2]; 2];
        for row in good.iter_mut() {
            for p in row.iter_mut() {
                *p = rng.gen_range(range.0..=range.1);
            }
        }
        repair(&mut rng, &mut good, floor);
        kernels.push(TransitionKernel::binary(good)?);
    }
    let initial_states = (0..num_arms).map(|_| rng.gen_range(0..2)).collect();
    RmabInstance::new(kernels, RewardTable::state_valued(2, 2), initial_states, budget)
}

/// Good-state probabilities uniform on `[0, 1]`, repaired to satisfy the
/// validity constraints.
pub fn generate_wide(num_arms: usize, budget: usize, seed: u64) -> Result<RmabInstance> {
    generate(num_arms, budget, seed, (0.0, 1.0), None)
}

/// Good-state probabilities confined to `[0.2, 0.4]`.
pub fn generate_thin(num_arms: usize, budget: usize, seed: u64) -> Result<RmabInstance> {
    generate(num_arms, budget, seed, THIN_RANGE, Some(THIN_RANGE.0))
}

/// Parsed dataset: valid rows plus the errors of skipped rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<GoodProbs>,
    pub skipped: Vec<Error>,
}

fn parse_row(line: &str) -> std::result::Result<GoodProbs, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 columns, found {}", fields.len()));
    }
    let mut vals = [0.0; 4];
    for (slot, (name, field)) in vals
        .iter_mut()
        .zip(DATASET_HEADER.split(',').zip(&fields))
    {
        let x: f64 = field
            .parse()
            .map_err(|_| format!("{name} = `{field}` is not a number"))?;
        if !(0.0..=1.0).contains(&x) {
            return Err(format!("{name} = {x} outside [0, 1]"));
        }
        *slot = x;
    }
    let good = [[vals[0], vals[1]], [vals[2], vals[3]]];
    if !satisfies_constraints(&good) {
        return Err("row violates the acting-helps / good-start-helps constraints".into());
    }
    Ok(good)
}

/// Parses dataset text. In strict mode the first bad row is an error;
/// otherwise bad rows are collected in [`Dataset::skipped`].
pub fn parse_dataset(text: &str, origin: &str, strict: bool) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == DATASET_HEADER => {}
        other => {
            return Err(Error::Dataset {
                path: origin.to_string(),
                line: 1,
                message: format!(
                    "expected header `{DATASET_HEADER}`, found `{}`",
                    other.map_or("", |(_, h)| h.trim())
                ),
            })
        }
    }
    let mut data = Dataset::default();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        match parse_row(line) {
            Ok(row) => data.rows.push(row),
            Err(message) => {
                let err = Error::Dataset {
                    path: origin.to_string(),
                    line: idx + 1,
                    message,
                };
                if strict {
                    return Err(err);
                }
                log::warn!("skipping row: {err}");
                data.skipped.push(err);
            }
        }
    }
    Ok(data)
}

pub fn read_dataset(path: &Path, strict: bool) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Dataset {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    parse_dataset(&text, &path.display().to_string(), strict)
}

/// Draws `num_arms` rows uniformly with replacement.
pub fn sample_instance(data: &Dataset, num_arms: usize, budget: usize, seed: u64) -> Result<RmabInstance> {
    if data.rows.is_empty() && num_arms > 0 {
        return Err(Error::InvalidInput("dataset has no valid rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels = (0..num_arms)
        .map(|_| TransitionKernel::binary(data.rows[rng.gen_range(0..data.rows.len())]))
        .collect::<Result<Vec<_>>>()?;
    let initial_states = (0..num_arms).map(|_| rng.gen_range(0..2)).collect();
    RmabInstance::new(kernels, RewardTable::state_valued(2, 2), initial_states, budget)
}

/// Loads a dataset file and samples an instance from it.
pub fn load_dataset(path: &Path, num_arms: usize, budget: usize, seed: u64, strict: bool) -> Result<RmabInstance> {
    let data = read_dataset(path, strict)?;
    sample_instance(&data, num_arms, budget, seed)
}

/// Renders kernels in the dataset schema.
pub fn format_dataset(kernels: &[TransitionKernel]) -> String {
    let mut out = String::with_capacity(32 * (kernels.len() + 1));
    out.push_str(DATASET_HEADER);
    out.push('\n');
    for k in kernels {
        let g = good_probs(k);
        let _ = writeln!(out, "{},{},{},{}", g[0][0], g[0][1], g[1][0], g[1][1]);
    }
    out
}
