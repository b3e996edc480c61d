use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KarmaError, Result};
use crate::model::{Game, SocialState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub type_index: usize,
    /// Index into the type's urgency chain.
    pub urgency: usize,
    pub karma: u64,
}

/// Finite population with its undistributed surplus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub agents: Vec<Agent>,
    /// Karma held back by carry-mode redistribution.
    pub surplus: u64,
}

impl Population {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    /// Karma in circulation plus the undistributed surplus.
    pub fn total_karma(&self) -> u64 {
        self.agents.iter().map(|a| a.karma).sum::<u64>() + self.surplus
    }
}

/// How initial karma is assigned.
#[derive(Debug, Clone, PartialEq)]
pub enum InitKarma<'a> {
    /// Every agent starts at `k_bar`.
    PointMassKbar,
    /// `(u, k)` drawn from each type's part of `d`, then adjusted one unit
    /// at a time so the total is exactly `n * k_bar`.
    SampleFrom(&'a SocialState),
}

/// Number of agents of each type: `n * share` with largest-remainder rounding.
pub fn type_counts(shares: &[f64], n: usize) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|g| g * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    // Stable sort keeps ties in type order, so the result is deterministic.
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    for &t in order.iter().take(n.saturating_sub(assigned)) {
        counts[t] += 1;
    }
    counts
}

pub fn init_population<R: Rng>(
    game: &Game,
    n_agents: usize,
    init: &InitKarma<'_>,
    rng: &mut R,
) -> Result<Population> {
    if n_agents == 0 || n_agents % 2 == 1 {
        return Err(KarmaError::OddPopulation(n_agents));
    }
    let shares: Vec<f64> = game.types().iter().map(|t| t.share).collect();
    let counts = type_counts(&shares, n_agents);
    for (t, (&c, &g)) in counts.iter().zip(&shares).enumerate() {
        if (c as f64 - g * n_agents as f64).abs() > 1e-9 {
            tracing::warn!(
                type_index = t,
                share = g,
                agents = c,
                "type share is not representable with this population size; rounded"
            );
        }
    }
    let k_bar = game.k_bar() as u64;
    let levels = game.levels();
    let mut agents = Vec::with_capacity(n_agents);
    for (t, &count) in counts.iter().enumerate() {
        let chain = &game.agent_type(t).urgency;
        match init {
            InitKarma::PointMassKbar => {
                let stationary = WeightedIndex::new(chain.stationary())
                    .map_err(|e| KarmaError::InvalidChain(e.to_string()))?;
                for _ in 0..count {
                    agents.push(Agent {
                        type_index: t,
                        urgency: stationary.sample(rng),
                        karma: k_bar,
                    });
                }
            }
            InitKarma::SampleFrom(state) => {
                state.validate(game)?;
                let joint = WeightedIndex::new(state.distribution(t))
                    .map_err(|e| KarmaError::Scenario(format!("type[{t}].d: {e}")))?;
                for _ in 0..count {
                    let i = joint.sample(rng);
                    agents.push(Agent {
                        type_index: t,
                        urgency: i / levels,
                        karma: (i % levels) as u64,
                    });
                }
            }
        }
    }
    let target = k_bar * n_agents as u64;
    let mut total: u64 = agents.iter().map(|a| a.karma).sum();
    while total < target {
        agents[rng.gen_range(0..n_agents)].karma += 1;
        total += 1;
    }
    while total > target {
        let i = rng.gen_range(0..n_agents);
        if agents[i].karma > 0 {
            agents[i].karma -= 1;
            total -= 1;
        }
    }
    Ok(Population { agents, surplus: 0 })
}

/// What happens to the remainder of an uneven surplus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redistribution {
    /// The remainder goes as +1 to that many distinct agents chosen uniformly.
    #[default]
    ExactSum,
    /// The remainder stays in the pool for the next round.
    Carry,
}

/// Splits `surplus` over `n` agents: `floor(surplus / n)` each, and the
/// remainder either handed out at random or carried. Returns the
/// allocation and the carried amount.
pub fn integer_redistribute<R: Rng>(
    surplus: u64,
    n: usize,
    mode: Redistribution,
    rng: &mut R,
) -> (Vec<u64>, u64) {
    if n == 0 {
        return (Vec::new(), surplus);
    }
    let base = surplus / n as u64;
    let remainder = (surplus % n as u64) as usize;
    let mut out = vec![base; n];
    match mode {
        Redistribution::ExactSum => {
            if remainder > 0 {
                for i in sample(rng, n, remainder) {
                    out[i] += 1;
                }
            }
            (out, 0)
        }
        Redistribution::Carry => (out, remainder as u64),
    }
}
