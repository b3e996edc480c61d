use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KarmaError, Result};
use crate::model::{fractional_split, Game, PaymentRule, SocialState};
use crate::simulation::population::{integer_redistribute, Population, Redistribution};

/// Allocation scheme. `Karma` runs the mechanism under a bidding policy;
/// the others ignore karma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scheme {
    Karma,
    Coin,
    Dict,
    Turn,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Karma, Scheme::Coin, Scheme::Dict, Scheme::Turn];
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Karma => "KARMA",
            Scheme::Coin => "COIN",
            Scheme::Dict => "DICT",
            Scheme::Turn => "TURN",
        })
    }
}

impl FromStr for Scheme {
    type Err = KarmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "KARMA" => Ok(Scheme::Karma),
            "COIN" => Ok(Scheme::Coin),
            "DICT" => Ok(Scheme::Dict),
            "TURN" => Ok(Scheme::Turn),
            other => Err(KarmaError::Scenario(format!("unknown scheme {other:?}"))),
        }
    }
}

/// What decides each competition.
#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a> {
    /// Bids drawn from the policy; karma changes hands per the mechanism.
    Karma(&'a SocialState),
    Benchmark(Scheme),
}

impl Strategy<'_> {
    pub fn scheme(&self) -> Scheme {
        match self {
            Strategy::Karma(_) => Scheme::Karma,
            Strategy::Benchmark(s) => *s,
        }
    }
}

/// Per-agent view of the competitors needed by TURN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessHistory {
    pub wins: u64,
    pub interactions: u64,
}

impl AccessHistory {
    /// Compares access fractions exactly; no interactions counts as zero.
    pub fn cmp_fraction(&self, other: &AccessHistory) -> Ordering {
        match (self.interactions, other.interactions) {
            (0, 0) => Ordering::Equal,
            (0, _) => 0.cmp(&other.wins),
            (_, 0) => self.wins.cmp(&0),
            (a, b) => (self.wins as u128 * b as u128).cmp(&(other.wins as u128 * a as u128)),
        }
    }
}

/// Winner (0 for the first agent, 1 for the second) of one benchmark
/// competition. `urgency` holds urgency values, not state indices.
pub fn benchmark_allocate<R: Rng>(
    scheme: Scheme,
    urgency: [f64; 2],
    history: [AccessHistory; 2],
    rng: &mut R,
) -> usize {
    let order = match scheme {
        Scheme::Coin | Scheme::Karma => Ordering::Equal,
        Scheme::Dict => urgency[1].total_cmp(&urgency[0]),
        Scheme::Turn => history[0].cmp_fraction(&history[1]),
    };
    match order {
        Ordering::Less => 0,
        Ordering::Greater => 1,
        Ordering::Equal => rng.gen_range(0..2),
    }
}

/// Cumulative bid tables for fast sampling, one row per `(type, u, k)`.
pub(crate) struct BidSampler {
    levels: usize,
    rows: Vec<Vec<Option<WeightedIndex<f64>>>>,
}

impl BidSampler {
    pub fn new(game: &Game, state: &SocialState) -> Result<Self> {
        state.validate(game)?;
        let levels = game.levels();
        let rows = (0..game.n_types())
            .map(|t| {
                let n_u = game.agent_type(t).urgency.len();
                (0..n_u * levels)
                    .map(|i| {
                        let row = state.policy_row(t, i / levels, i % levels);
                        if row.len() == 1 {
                            None
                        } else {
                            WeightedIndex::new(row).ok()
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { levels, rows })
    }

    /// Bid of an agent; karma above `k_max` uses the row at `k_max`.
    pub fn sample<R: Rng>(
        &self,
        type_index: usize,
        urgency: usize,
        karma: u64,
        rng: &mut R,
    ) -> u64 {
        let k = (karma as usize).min(self.levels - 1);
        match &self.rows[type_index][urgency * self.levels + k] {
            Some(dist) => dist.sample(rng) as u64,
            None => 0,
        }
    }
}

/// What happened to one agent in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentEvent {
    pub agent: usize,
    pub type_index: usize,
    /// Urgency value during the competition.
    pub urgency: f64,
    pub bid: u64,
    pub selected: bool,
    pub reward: f64,
    /// Karma after payments, redistribution and tax.
    pub karma: u64,
}

/// Mutable state carried across rounds besides the population.
pub(crate) struct Engine<'a> {
    game: &'a Game,
    strategy: Strategy<'a>,
    sampler: Option<BidSampler>,
    redistribution: Redistribution,
    urgency_rows: Vec<Vec<WeightedIndex<f64>>>,
    pub history: Vec<AccessHistory>,
    order: Vec<usize>,
    bids: Vec<u64>,
    selected: Vec<bool>,
    rewards: Vec<f64>,
    urgency_values: Vec<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(
        game: &'a Game,
        strategy: Strategy<'a>,
        redistribution: Redistribution,
        n_agents: usize,
    ) -> Result<Self> {
        let sampler = match strategy {
            Strategy::Karma(state) => Some(BidSampler::new(game, state)?),
            Strategy::Benchmark(Scheme::Karma) => {
                return Err(KarmaError::Scenario(
                    "the KARMA scheme needs an equilibrium policy".into(),
                ))
            }
            Strategy::Benchmark(_) => None,
        };
        let urgency_rows = game
            .types()
            .iter()
            .map(|t| {
                (0..t.urgency.len())
                    .map(|u| WeightedIndex::new(t.urgency.row(u)).expect("validated chain row"))
                    .collect()
            })
            .collect();
        Ok(Self {
            game,
            strategy,
            sampler,
            redistribution,
            urgency_rows,
            history: vec![
                AccessHistory {
                    wins: 0,
                    interactions: 0
                };
                n_agents
            ],
            order: (0..n_agents).collect(),
            bids: vec![0; n_agents],
            selected: vec![false; n_agents],
            rewards: vec![0.0; n_agents],
            urgency_values: vec![0.0; n_agents],
        })
    }

    /// One synchronous round: random perfect matching, bids, allocation,
    /// payments, redistribution, tax, then urgency transitions.
    pub fn step<R: Rng>(
        &mut self,
        pop: &mut Population,
        rng: &mut R,
        events: Option<&mut Vec<AgentEvent>>,
    ) {
        let n = pop.agents.len();
        let before = pop.total_karma();
        self.order.shuffle(rng);

        for (i, agent) in pop.agents.iter().enumerate() {
            let chain = &self.game.agent_type(agent.type_index).urgency;
            self.urgency_values[i] = chain.value(agent.urgency);
            self.bids[i] = match &self.sampler {
                Some(s) => s.sample(agent.type_index, agent.urgency, agent.karma, rng),
                None => 0,
            };
            assert!(self.bids[i] <= agent.karma, "bid exceeds karma");
        }

        let rule = self.game.mechanism().payment_rule;
        let mut pool = pop.surplus;
        for pair in self.order.chunks_exact(2) {
            let (a, b) = (pair[0], pair[1]);
            let first_wins = match self.strategy {
                Strategy::Karma(_) => match self.bids[a].cmp(&self.bids[b]) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => rng.gen_bool(0.5),
                },
                Strategy::Benchmark(scheme) => {
                    benchmark_allocate(
                        scheme,
                        [self.urgency_values[a], self.urgency_values[b]],
                        [self.history[a], self.history[b]],
                        rng,
                    ) == 0
                }
            };
            let (winner, loser) = if first_wins { (a, b) } else { (b, a) };
            self.selected[winner] = true;
            self.selected[loser] = false;
            self.rewards[winner] = 0.0;
            self.rewards[loser] = -self.urgency_values[loser];
            if self.sampler.is_some() {
                let paid = self.bids[winner];
                pop.agents[winner].karma -= paid;
                match rule {
                    PaymentRule::Pbp => pop.agents[loser].karma += paid,
                    PaymentRule::Pbs => pool += paid,
                }
            }
        }
        for (i, h) in self.history.iter_mut().enumerate() {
            h.interactions += 1;
            h.wins += self.selected[i] as u64;
        }

        if self.sampler.is_some() {
            let (alloc, carried) = integer_redistribute(pool, n, self.redistribution, rng);
            for (agent, extra) in pop.agents.iter_mut().zip(alloc) {
                agent.karma += extra;
            }
            pool = carried;
            if let Some(tax) = self.game.mechanism().tax {
                let k_max = self.game.k_max() as u64;
                let mut revenue = pool;
                for agent in pop.agents.iter_mut() {
                    let (lo, hi, p_lo) =
                        fractional_split(tax.amount(agent.karma.min(k_max) as usize));
                    let due = if rng.gen::<f64>() < p_lo { lo } else { hi } as u64;
                    let due = due.min(agent.karma);
                    agent.karma -= due;
                    revenue += due;
                }
                let (alloc, carried) = integer_redistribute(revenue, n, self.redistribution, rng);
                for (agent, extra) in pop.agents.iter_mut().zip(alloc) {
                    agent.karma += extra;
                }
                pool = carried;
            }
        }
        pop.surplus = pool;

        if let Some(events) = events {
            for (i, agent) in pop.agents.iter().enumerate() {
                events.push(AgentEvent {
                    agent: i,
                    type_index: agent.type_index,
                    urgency: self.urgency_values[i],
                    bid: self.bids[i],
                    selected: self.selected[i],
                    reward: self.rewards[i],
                    karma: agent.karma,
                });
            }
        }

        for agent in pop.agents.iter_mut() {
            agent.urgency = self.urgency_rows[agent.type_index][agent.urgency].sample(rng);
        }
        assert_eq!(pop.total_karma(), before, "karma not conserved");
    }

    #[cfg(test)]
    pub fn selected(&self) -> &[bool] {
        &self.selected
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentType, MechanismConfig, UrgencyChain};
    use crate::simulation::population::Agent;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn game(rule: PaymentRule) -> Game {
        let chain =
            UrgencyChain::new(vec![1.0, 10.0], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        Game::new(
            vec![AgentType::new(chain, 0.9, 1.0)],
            MechanismConfig::new(rule, 5).with_k_max(20),
        )
        .unwrap()
    }

    /// Every agent bids `bid(k)` deterministically.
    fn fixed_policy(game: &Game, bid: impl Fn(usize) -> usize) -> SocialState {
        let levels = game.levels();
        let base = SocialState::initial(game);
        let mut pi = vec![0.0; 2 * levels * levels];
        for u in 0..2 {
            for k in 0..levels {
                pi[(u * levels + k) * levels + bid(k).min(k)] = 1.0;
            }
        }
        SocialState::new(game, vec![base.distribution(0).to_vec()], vec![pi]).unwrap()
    }

    fn pop(karma: &[u64]) -> Population {
        Population {
            agents: karma
                .iter()
                .map(|&k| Agent {
                    type_index: 0,
                    urgency: 0,
                    karma: k,
                })
                .collect(),
            surplus: 0,
        }
    }

    #[test]
    fn zero_bids_move_no_karma() {
        let g = game(PaymentRule::Pbp);
        let state = fixed_policy(&g, |_| 0);
        let mut engine =
            Engine::new(&g, Strategy::Karma(&state), Redistribution::ExactSum, 2).unwrap();
        let mut p = pop(&[4, 7]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut wins = 0;
        for _ in 0..1000 {
            engine.step(&mut p, &mut rng, None);
            assert_eq!(p.agents[0].karma, 4);
            assert_eq!(p.agents[1].karma, 7);
            wins += engine.selected()[0] as u32;
        }
        assert!((400..600).contains(&wins), "coin gave {wins}");
    }

    #[test]
    fn pbp_winner_pays_loser() {
        let g = game(PaymentRule::Pbp);
        // karma 5 bids 3, karma 1 bids 1
        let state = fixed_policy(&g, |k| if k >= 5 { 3 } else { 1 });
        let mut engine =
            Engine::new(&g, Strategy::Karma(&state), Redistribution::ExactSum, 2).unwrap();
        let mut p = pop(&[5, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        engine.step(&mut p, &mut rng, None);
        assert_eq!((p.agents[0].karma, p.agents[1].karma), (2, 4));
        assert!(engine.selected()[0]);
    }

    #[test]
    fn pbs_surplus_is_redistributed() {
        let g = game(PaymentRule::Pbs);
        // Agents with 5 bid 5 against agents with 0; two winners pay 10.
        let state = fixed_policy(&g, |k| k);
        let mut engine =
            Engine::new(&g, Strategy::Karma(&state), Redistribution::ExactSum, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let mut p = pop(&[5, 0, 5, 0]);
            engine.step(&mut p, &mut rng, None);
            assert_eq!(p.total_karma(), 10);
        }
        // the agent holding 5 always wins and pays 5: one agent gets 2, three get 1
        let mut p = pop(&[5, 0, 0, 0]);
        engine.step(&mut p, &mut rng, None);
        let mut karma: Vec<u64> = p.agents.iter().map(|a| a.karma).collect();
        karma.sort();
        assert_eq!(karma, vec![1, 1, 1, 2]);
        // carry mode keeps the remainder: 3 over 4 agents is carried whole
        let state = fixed_policy(&g, |k| if k == 3 { 3 } else { 0 });
        let mut engine =
            Engine::new(&g, Strategy::Karma(&state), Redistribution::Carry, 4).unwrap();
        let mut p = pop(&[3, 0, 0, 0]);
        engine.step(&mut p, &mut rng, None);
        assert_eq!(p.total_karma(), 3);
        assert_eq!(p.surplus, 3);
    }

    #[test]
    fn dict_and_turn_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let none = AccessHistory {
            wins: 0,
            interactions: 0,
        };
        for _ in 0..100 {
            assert_eq!(
                benchmark_allocate(Scheme::Dict, [10.0, 1.0], [none; 2], &mut rng),
                0
            );
        }
        let ties: usize = (0..1000)
            .map(|_| benchmark_allocate(Scheme::Dict, [1.0, 1.0], [none; 2], &mut rng))
            .sum();
        assert!((400..600).contains(&ties));
        let a = AccessHistory {
            wins: 1,
            interactions: 3,
        };
        let b = AccessHistory {
            wins: 2,
            interactions: 5,
        };
        // 1/3 < 2/5, so the first agent has had less access
        assert_eq!(
            benchmark_allocate(Scheme::Turn, [0.0, 0.0], [a, b], &mut rng),
            0
        );
        assert_eq!(
            benchmark_allocate(Scheme::Turn, [0.0, 0.0], [b, a], &mut rng),
            1
        );
        assert_eq!(
            none.cmp_fraction(&AccessHistory {
                wins: 0,
                interactions: 4
            }),
            Ordering::Equal
        );
    }

    #[test]
    fn taxed_rounds_conserve_karma() {
        let chain =
            UrgencyChain::new(vec![1.0, 10.0], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let g = Game::new(
            vec![AgentType::new(chain, 0.9, 1.0)],
            MechanismConfig::new(PaymentRule::Pbs, 5)
                .with_k_max(20)
                .with_tax(crate::model::Tax {
                    coefficient: 0.05,
                    exponent: 2.0,
                }),
        )
        .unwrap();
        let state = fixed_policy(&g, |k| k / 2);
        let mut engine =
            Engine::new(&g, Strategy::Karma(&state), Redistribution::ExactSum, 6).unwrap();
        let mut p = pop(&[0, 2, 4, 6, 8, 10]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            engine.step(&mut p, &mut rng, None);
            assert_eq!(p.total_karma(), 30);
        }
    }

    #[test]
    fn scheme_parsing() {
        for s in Scheme::ALL {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!("dict".parse::<Scheme>().is_ok());
        assert!("LOTTERY".parse::<Scheme>().is_err());
    }
}
