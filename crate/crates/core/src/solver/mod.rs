//! Stationary Nash equilibrium search.
//!
//! Each iteration evaluates every type's current policy (discounted value
//! iteration, or relative value iteration when `alpha = 1`), forms the
//! softmax of the single-stage deviation rewards, and moves the distribution
//! and the policy a small step toward `d P` and the perturbed best response.
//! A rest point of these dynamics is a stationary equilibrium of the
//! perturbed game.

mod dynamics;
mod params;
mod response;
mod value;

pub use dynamics::{
    advance, analyze, bid_all_policy, evolution_step, solve, solve_equilibrium,
    solve_equilibrium_average_reward, solve_equilibrium_average_reward_with,
    solve_equilibrium_with, tail_mass, Diagnostics, EquilibriumResult, IterationRecord,
    StepAnalysis,
};
pub use params::{DirectSolve, SolverParams};
pub use response::{best_response, perturbed_best_response, q_values, BestResponse};
pub use value::{
    discounted_iteration, evaluate_value, relative_iteration, relative_value, Evaluation,
    TypeValue, ValueTable,
};
