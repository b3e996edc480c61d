//! Finite-population simulation of the karma mechanism and of the COIN,
//! DICT and TURN benchmark schemes.
//!
//! Every round matches the whole population in random pairs. Karma and the
//! undistributed surplus are integers and their total is checked after each
//! round.

mod engine;
mod population;
mod run;

pub use engine::{benchmark_allocate, AccessHistory, AgentEvent, Scheme, Strategy};
pub use population::{
    init_population, integer_redistribute, type_counts, Agent, InitKarma, Population,
    Redistribution,
};
pub use run::{
    histogram_distance, repeat_rng, run_repeat, run_simulation, InitKarmaMode, RunOutput,
    RunSummary, SimTrace, SimulationConfig,
};

use rand::Rng;

use crate::error::Result;
use crate::model::Game;

/// Plays one round on `population` and returns its per-agent records.
/// For repeated rounds use [`run_simulation`], which keeps the TURN access
/// history between rounds.
pub fn sim_step<R: Rng>(
    game: &Game,
    strategy: Strategy<'_>,
    redistribution: Redistribution,
    population: &mut Population,
    rng: &mut R,
) -> Result<Vec<AgentEvent>> {
    let mut engine = engine::Engine::new(game, strategy, redistribution, population.len())?;
    let mut events = Vec::with_capacity(population.len());
    engine.step(population, rng, Some(&mut events));
    Ok(events)
}
