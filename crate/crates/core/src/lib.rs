//! Online learning for restless multi-armed bandits with optimistic Whittle
//! indices.
//!
//! Each arm is a small MDP whose transition kernel is unknown. Learners keep
//! transition counts, build L1 confidence regions around the empirical
//! kernels, and act on Whittle indices computed from optimistic members of
//! those regions. The [`harness`] module runs the episodic regret
//! experiments against an oracle that knows the true kernels.

pub mod confidence;
pub mod domains;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod learners;
pub mod mdp;
pub mod optimism;
pub mod whittle;

pub use error::{Error, Result};
pub use kernel::{RewardTable, TransitionKernel};
pub use mdp::{evaluate_policy, lagrangian_value, solve_penalized_mdp, PenalizedSolution};
pub use whittle::{
    kth_largest_index, threshold_policy, top_k_pull, whittle_index, IndexMemoizer, IndexOutcome,
    WhittleTable,
};
