//! Stationary Nash equilibria of karma resource-allocation games.
//!
//! Agents repeatedly compete in pairs for a contested resource by bidding an
//! artificial, non-tradeable currency (karma). The crate provides the
//! mean-field game model ([`model`]), an equilibrium solver based on
//! perturbed best-response dynamics ([`solver`]), a finite-population
//! simulator with benchmark allocation schemes ([`simulation`]), welfare
//! measures ([`metrics`]) and scenario files with bundled presets
//! ([`scenario`]).

pub mod error;
pub mod io;
mod linalg;
pub mod metrics;
pub mod model;
pub mod scenario;
pub mod simulation;
pub mod solver;

pub use error::{KarmaError, Result};
pub use model::{AgentType, Game, MechanismConfig, PaymentRule, SocialState, Tax, UrgencyChain};
pub use solver::{EquilibriumResult, SolverParams, ValueTable};
