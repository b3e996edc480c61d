use serde::{Deserialize, Serialize};

use crate::model::{expected_over_urgency, Game, MarketKernel};
use crate::solver::value::TypeValue;

/// Per-urgency continuation values already pushed through the settlement
/// stage: `[u * levels + m]` holds `E[value(u+, k+) | u, m]`.
pub(crate) fn settled_continuation(
    game: &Game,
    kernel: &MarketKernel,
    type_index: usize,
    value: &[f64],
) -> Vec<f64> {
    let chain = &game.agent_type(type_index).urgency;
    let levels = kernel.levels();
    let mut out = vec![0.0; chain.len() * levels];
    let mut ev = vec![0.0; levels];
    for u in 0..chain.len() {
        expected_over_urgency(chain.row(u), value, levels, &mut ev);
        kernel.settle_values(&ev, &mut out[u * levels..(u + 1) * levels]);
    }
    out
}

/// Q-values at `(u, k)` given settled continuation values.
pub(crate) fn q_from_settled(
    kernel: &MarketKernel,
    urgency: f64,
    weight: f64,
    settled_u: &[f64],
    k: usize,
    scratch: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    kernel.expected_after_payment(k, settled_u, scratch);
    out.clear();
    out.extend(
        scratch
            .iter()
            .enumerate()
            .map(|(b, c)| kernel.reward(urgency, b) + weight * c),
    );
}

/// Single-stage deviation rewards for every feasible bid `0..=k`.
pub fn q_values(
    game: &Game,
    kernel: &MarketKernel,
    type_index: usize,
    u: usize,
    k: usize,
    value: &TypeValue,
) -> Vec<f64> {
    let t = game.agent_type(type_index);
    let weight = match value {
        TypeValue::Discounted { .. } => t.discount,
        TypeValue::AverageReward { .. } => 1.0,
    };
    let levels = kernel.levels();
    let settled = settled_continuation(game, kernel, type_index, value.continuation());
    let mut scratch = Vec::new();
    let mut out = Vec::new();
    q_from_settled(
        kernel,
        t.urgency.value(u),
        weight,
        &settled[u * levels..(u + 1) * levels],
        k,
        &mut scratch,
        &mut out,
    );
    out
}

/// Maximizing bids of a Q vector. Any mixture over `bids` is a best response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub bids: Vec<usize>,
    pub q_max: f64,
}

impl BestResponse {
    /// Uniform mixture over the maximizing bids, as a vector over `0..len`.
    pub fn uniform_mixture(&self, len: usize) -> Vec<f64> {
        let mut p = vec![0.0; len];
        let w = 1.0 / self.bids.len() as f64;
        for b in &self.bids {
            p[*b] = w;
        }
        p
    }

    pub fn contains(&self, bid: usize) -> bool {
        self.bids.contains(&bid)
    }
}

/// Bids within `tie_tol * max(1, |q_max|)` of the maximum.
pub fn best_response(q: &[f64], tie_tol: f64) -> BestResponse {
    let q_max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = tie_tol * q_max.abs().max(1.0);
    BestResponse {
        bids: q
            .iter()
            .enumerate()
            .filter(|(_, v)| **v >= q_max - slack)
            .map(|(b, _)| b)
            .collect(),
        q_max,
    }
}

/// Softmax of `lambda * q`, shifted by the maximum for stability.
pub fn perturbed_best_response(q: &[f64], lambda: f64) -> Vec<f64> {
    let mut out = vec![0.0; q.len()];
    perturbed_best_response_into(q, lambda, &mut out);
    out
}

pub(crate) fn perturbed_best_response_into(q: &[f64], lambda: f64, out: &mut [f64]) {
    let q_max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(q) {
        *o = (lambda * (v - q_max)).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}
