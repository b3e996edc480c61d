use serde::{Deserialize, Serialize};

use crate::error::{KarmaError, Result};
use crate::model::social::SocialState;

/// Distribution of the opposing agent's bid over `0..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidDistribution {
    probabilities: Vec<f64>,
}

impl BidDistribution {
    /// Normalizes `weights`; panics if they are all zero.
    pub fn new(weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0, "bid distribution needs positive mass");
        Self {
            probabilities: weights.into_iter().map(|w| w / total).collect(),
        }
    }

    pub fn point_mass(bid: usize, k_max: usize) -> Self {
        let mut p = vec![0.0; k_max + 1];
        p[bid] = 1.0;
        Self { probabilities: p }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn prob(&self, bid: usize) -> f64 {
        self.probabilities[bid]
    }

    pub fn k_max(&self) -> usize {
        self.probabilities.len() - 1
    }

    pub fn mean(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(b, p)| b as f64 * p)
            .sum()
    }

    /// `P[selected | b]` for every bid `b`, i.e. the mass strictly below plus
    /// half the mass at `b`.
    pub fn selection_table(&self) -> Vec<f64> {
        let mut below = 0.0;
        self.probabilities
            .iter()
            .map(|p| {
                // rounding in the running sum can overshoot 1 by an ulp
                let win = (below + 0.5 * p).min(1.0);
                below += p;
                win
            })
            .collect()
    }
}

/// Probability of the two resource-competition outcomes for a given bid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeKernel {
    pub p_selected: f64,
    pub p_yield: f64,
}

impl OutcomeKernel {
    pub fn from_selected(p_selected: f64) -> Self {
        Self {
            p_selected,
            p_yield: 1.0 - p_selected,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Selected,
    Yield,
}

/// Population distribution of bids, `nu[b] = sum d * pi[b | .]`.
pub fn bid_distribution(state: &SocialState) -> BidDistribution {
    let levels = state.levels();
    let mut nu = vec![0.0; levels];
    for t in 0..state.n_types() {
        for u in 0..state.n_urgency(t) {
            for k in 0..levels {
                let m = state.mass(t, u, k);
                if m == 0.0 {
                    continue;
                }
                for (b, p) in state.policy_row(t, u, k).iter().enumerate() {
                    nu[b] += m * p;
                }
            }
        }
    }
    BidDistribution::new(nu)
}

pub fn win_probability(bid: usize, opponents: &BidDistribution) -> Result<OutcomeKernel> {
    let k_max = opponents.k_max();
    if bid > k_max {
        return Err(KarmaError::BidOutOfRange { bid, max: k_max });
    }
    let p = opponents.probabilities();
    let below: f64 = p[..bid].iter().sum();
    Ok(OutcomeKernel::from_selected(below + 0.5 * p[bid]))
}

/// Expected immediate reward `-u * P[yield | bid]`.
pub fn immediate_reward(urgency: f64, bid: usize, opponents: &BidDistribution) -> Result<f64> {
    Ok(-urgency * win_probability(bid, opponents)?.p_yield)
}

/// Expected karma paid per agent and round under pay-bid-to-society.
pub fn mean_surplus_pbs(state: &SocialState) -> f64 {
    let nu = bid_distribution(state);
    surplus_from_bids(&nu, &nu.selection_table())
}

pub(crate) fn surplus_from_bids(nu: &BidDistribution, win: &[f64]) -> f64 {
    nu.probabilities()
        .iter()
        .zip(win)
        .enumerate()
        .map(|(b, (p, w))| p * w * b as f64)
        .sum()
}
