use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KarmaError, Result};
use crate::model::{Game, SocialState};
use crate::simulation::engine::{AgentEvent, Engine, Scheme, Strategy};
use crate::simulation::population::{init_population, InitKarma, Redistribution};

/// Initial karma assignment, as stored in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKarmaMode {
    #[default]
    PointMassKbar,
    /// Sample each agent's `(u, k)` from the equilibrium distribution.
    SampleFromEquilibrium,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_agents: usize,
    /// Rounds, i.e. interactions per agent.
    pub interactions: usize,
    pub repeats: usize,
    pub seed: u64,
    pub init_karma: InitKarmaMode,
    pub redistribution: Redistribution,
    /// Keep every agent-interaction record.
    pub record_trace: bool,
    /// Rounds to skip before accumulating the `(type, u, k)` histogram;
    /// `None` skips the histogram.
    pub histogram_burn_in: Option<usize>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_agents: 200,
            interactions: 1000,
            repeats: 10,
            seed: 0,
            init_karma: InitKarmaMode::PointMassKbar,
            redistribution: Redistribution::ExactSum,
            record_trace: false,
            histogram_burn_in: None,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_agents % 2 == 1 {
            return Err(KarmaError::OddPopulation(self.n_agents));
        }
        if self.interactions == 0 || self.repeats == 0 {
            return Err(KarmaError::Scenario(
                "simulation.interactions and simulation.repeats must be positive".into(),
            ));
        }
        if let Some(b) = self.histogram_burn_in {
            if b >= self.interactions {
                return Err(KarmaError::Scenario(format!(
                    "simulation.histogram_burn_in = {b} leaves no rounds to record"
                )));
            }
        }
        Ok(())
    }
}

/// Per-agent totals of one repeat; all welfare measures derive from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheme: Scheme,
    pub repeat: usize,
    pub seed: u64,
    pub interactions: usize,
    pub agent_types: Vec<usize>,
    pub wins: Vec<u64>,
    pub reward_sums: Vec<f64>,
    pub final_karma: Vec<u64>,
    /// Time-averaged `(type, u, min(k, k_max))` frequencies after burn-in,
    /// laid out like the social state's distribution.
    pub histogram: Option<Vec<Vec<f64>>>,
}

/// Every agent-interaction of one repeat, in round order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub scheme: Scheme,
    pub repeat: usize,
    pub seed: u64,
    pub n_agents: usize,
    pub interactions: usize,
    pub events: Vec<AgentEvent>,
}

impl SimTrace {
    pub fn round(&self, round: usize) -> &[AgentEvent] {
        &self.events[round * self.n_agents..(round + 1) * self.n_agents]
    }

    /// Folds the records into per-agent totals.
    pub fn summarize(&self) -> Result<RunSummary> {
        if self.events.is_empty() || self.n_agents == 0 {
            return Err(KarmaError::EmptyTrace);
        }
        let n = self.n_agents;
        let mut summary = RunSummary {
            scheme: self.scheme,
            repeat: self.repeat,
            seed: self.seed,
            interactions: self.events.len() / n,
            agent_types: self.events[..n].iter().map(|e| e.type_index).collect(),
            wins: vec![0; n],
            reward_sums: vec![0.0; n],
            final_karma: vec![0; n],
            histogram: None,
        };
        for e in &self.events {
            summary.wins[e.agent] += e.selected as u64;
            summary.reward_sums[e.agent] += e.reward;
            summary.final_karma[e.agent] = e.karma;
        }
        Ok(summary)
    }

    /// Columns: repeat, round, agent, type, urgency, bid, outcome, reward, karma.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "repeat", "round", "agent", "type", "urgency", "bid", "outcome", "reward", "karma",
        ])?;
        for (i, e) in self.events.iter().enumerate() {
            w.write_record([
                self.repeat.to_string(),
                (i / self.n_agents).to_string(),
                e.agent.to_string(),
                e.type_index.to_string(),
                e.urgency.to_string(),
                e.bid.to_string(),
                if e.selected { "selected" } else { "yield" }.to_string(),
                e.reward.to_string(),
                e.karma.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of one repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub trace: Option<SimTrace>,
}

/// Generator for one repeat: the scenario seed selects the key and the
/// repeat index the stream, so repeats are independent and each is
/// reproducible on its own.
pub fn repeat_rng(seed: u64, repeat: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64);
    rng
}

pub fn run_repeat(
    game: &Game,
    strategy: Strategy<'_>,
    config: &SimulationConfig,
    repeat: usize,
) -> Result<RunOutput> {
    config.validate()?;
    let mut rng = repeat_rng(config.seed, repeat);
    let init = match (config.init_karma, strategy) {
        (InitKarmaMode::SampleFromEquilibrium, Strategy::Karma(state)) => {
            InitKarma::SampleFrom(state)
        }
        (InitKarmaMode::SampleFromEquilibrium, _) => {
            return Err(KarmaError::Scenario(
                "sample_from_equilibrium needs an equilibrium policy".into(),
            ))
        }
        (InitKarmaMode::PointMassKbar, _) => InitKarma::PointMassKbar,
    };
    let n = config.n_agents;
    let mut pop = init_population(game, n, &init, &mut rng)?;
    let mut engine = Engine::new(game, strategy, config.redistribution, n)?;
    let mut events = config
        .record_trace
        .then(|| Vec::with_capacity(n * config.interactions));
    let mut reward_sums = vec![0.0; n];
    let levels = game.levels();
    let mut histogram: Option<Vec<Vec<f64>>> = config.histogram_burn_in.map(|_| {
        game.types()
            .iter()
            .map(|t| vec![0.0; t.urgency.len() * levels])
            .collect()
    });
    let mut recorded_rounds = 0usize;
    for round in 0..config.interactions {
        if let (Some(hist), Some(burn_in)) = (histogram.as_mut(), config.histogram_burn_in) {
            if round >= burn_in {
                for a in &pop.agents {
                    let k = (a.karma as usize).min(levels - 1);
                    hist[a.type_index][a.urgency * levels + k] += 1.0;
                }
                recorded_rounds += 1;
            }
        }
        engine.step(&mut pop, &mut rng, events.as_mut());
        for (s, r) in reward_sums.iter_mut().zip(engine.rewards()) {
            *s += r;
        }
    }
    if let Some(hist) = histogram.as_mut() {
        let scale = 1.0 / (recorded_rounds * n) as f64;
        hist.iter_mut().flatten().for_each(|x| *x *= scale);
    }
    let summary = RunSummary {
        scheme: strategy.scheme(),
        repeat,
        seed: config.seed,
        interactions: config.interactions,
        agent_types: pop.agents.iter().map(|a| a.type_index).collect(),
        wins: engine.history.iter().map(|h| h.wins).collect(),
        reward_sums,
        final_karma: pop.agents.iter().map(|a| a.karma).collect(),
        histogram,
    };
    let trace = events.map(|events| SimTrace {
        scheme: strategy.scheme(),
        repeat,
        seed: config.seed,
        n_agents: n,
        interactions: config.interactions,
        events,
    });
    Ok(RunOutput { summary, trace })
}

/// All repeats, run in parallel, returned in repeat order.
pub fn run_simulation(
    game: &Game,
    strategy: Strategy<'_>,
    config: &SimulationConfig,
) -> Result<Vec<RunOutput>> {
    config.validate()?;
    (0..config.repeats)
        .into_par_iter()
        .map(|r| run_repeat(game, strategy, config, r))
        .collect()
}

/// L1 distance between an empirical histogram and the distribution of
/// `state`, over all types.
pub fn histogram_distance(histogram: &[Vec<f64>], state: &SocialState) -> f64 {
    histogram
        .iter()
        .enumerate()
        .map(|(t, h)| {
            h.iter()
                .zip(state.distribution(t))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .sum()
}
