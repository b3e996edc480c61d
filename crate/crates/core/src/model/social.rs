use serde::{Deserialize, Serialize};

use crate::error::{KarmaError, Result};
use crate::model::mechanism::Game;

pub(crate) const DIST_TOL: f64 = 1e-9;

/// Joint type-urgency-karma distribution together with each type's bidding
/// policy.
///
/// For type `t`, `distribution(t)` is laid out as `[u * levels + k]` and
/// `policy(t)` as `[(u * levels + k) * levels + b]`, with zero weight on
/// every bid above the karma level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialState {
    levels: usize,
    n_urgency: Vec<usize>,
    d: Vec<Vec<f64>>,
    pi: Vec<Vec<f64>>,
}

impl SocialState {
    pub fn new(game: &Game, d: Vec<Vec<f64>>, pi: Vec<Vec<f64>>) -> Result<Self> {
        let state = Self {
            levels: game.levels(),
            n_urgency: game.types().iter().map(|t| t.urgency.len()).collect(),
            d,
            pi,
        };
        state.validate(game)?;
        Ok(state)
    }

    /// Urgency-stationary distribution with all karma at `k_bar`, and a policy
    /// that is uniform over feasible bids.
    pub fn initial(game: &Game) -> Self {
        let levels = game.levels();
        let k_bar = game.k_bar();
        let mut d = Vec::with_capacity(game.n_types());
        let mut pi = Vec::with_capacity(game.n_types());
        for t in game.types() {
            let n_u = t.urgency.len();
            let mut dt = vec![0.0; n_u * levels];
            for (u, p) in t.urgency.stationary().iter().enumerate() {
                dt[u * levels + k_bar] = t.share * p;
            }
            d.push(dt);
            pi.push(uniform_policy(n_u, levels));
        }
        Self {
            levels,
            n_urgency: game.types().iter().map(|t| t.urgency.len()).collect(),
            d,
            pi,
        }
    }

    /// Same distribution, uniform policy.
    pub fn with_uniform_policy(mut self) -> Self {
        for (t, p) in self.pi.iter_mut().enumerate() {
            *p = uniform_policy(self.n_urgency[t], self.levels);
        }
        self
    }

    pub fn validate(&self, game: &Game) -> Result<()> {
        let levels = game.levels();
        let bad = |path: String, reason: String| KarmaError::InvalidSocialState { path, reason };
        if self.levels != levels {
            return Err(bad("levels".into(), format!("{} != {levels}", self.levels)));
        }
        if self.d.len() != game.n_types() || self.pi.len() != game.n_types() {
            return Err(bad(
                "types".into(),
                format!("expected {} types", game.n_types()),
            ));
        }
        for (ti, t) in game.types().iter().enumerate() {
            let n_u = t.urgency.len();
            if self.n_urgency[ti] != n_u {
                return Err(bad(format!("type[{ti}]"), "urgency state count".into()));
            }
            let d = &self.d[ti];
            if d.len() != n_u * levels {
                return Err(bad(
                    format!("type[{ti}].d"),
                    format!("length {} != {}", d.len(), n_u * levels),
                ));
            }
            if let Some(i) = d.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(bad(
                    format!("type[{ti}].d[u={}, k={}]", i / levels, i % levels),
                    "negative or non-finite mass".into(),
                ));
            }
            let mass: f64 = d.iter().sum();
            if (mass - t.share).abs() > DIST_TOL {
                return Err(bad(
                    format!("type[{ti}].d"),
                    format!("total mass {mass} != share {}", t.share),
                ));
            }
            let pi = &self.pi[ti];
            if pi.len() != n_u * levels * levels {
                return Err(bad(format!("type[{ti}].pi"), "wrong length".into()));
            }
            for u in 0..n_u {
                for k in 0..levels {
                    let row = &pi[(u * levels + k) * levels..(u * levels + k + 1) * levels];
                    let path = || format!("type[{ti}].pi[u={u}, k={k}]");
                    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                        return Err(bad(path(), "negative or non-finite probability".into()));
                    }
                    if row[k + 1..].iter().any(|p| *p != 0.0) {
                        return Err(bad(path(), "weight on bid above karma".into()));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > DIST_TOL {
                        return Err(bad(path(), format!("sums to {sum}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks that mean karma is within `tol` of `k_bar`.
    pub fn validate_mean_karma(&self, game: &Game, tol: f64) -> Result<()> {
        let mean = self.mean_karma();
        if (mean - game.k_bar() as f64).abs() > tol {
            return Err(KarmaError::InvalidSocialState {
                path: "d".into(),
                reason: format!("mean karma {mean} differs from k_bar {}", game.k_bar()),
            });
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn k_max(&self) -> usize {
        self.levels - 1
    }

    pub fn n_types(&self) -> usize {
        self.d.len()
    }

    pub fn n_urgency(&self, type_index: usize) -> usize {
        self.n_urgency[type_index]
    }

    pub fn distribution(&self, type_index: usize) -> &[f64] {
        &self.d[type_index]
    }

    pub fn policy(&self, type_index: usize) -> &[f64] {
        &self.pi[type_index]
    }

    pub(crate) fn distribution_mut(&mut self, type_index: usize) -> &mut Vec<f64> {
        &mut self.d[type_index]
    }

    pub(crate) fn policy_mut(&mut self, type_index: usize) -> &mut Vec<f64> {
        &mut self.pi[type_index]
    }

    pub fn mass(&self, type_index: usize, u: usize, k: usize) -> f64 {
        self.d[type_index][u * self.levels + k]
    }

    /// Bid probabilities at `(u, k)`, restricted to the feasible bids `0..=k`.
    pub fn policy_row(&self, type_index: usize, u: usize, k: usize) -> &[f64] {
        let start = (u * self.levels + k) * self.levels;
        &self.pi[type_index][start..start + k + 1]
    }

    pub fn mean_karma(&self) -> f64 {
        self.d
            .iter()
            .map(|d| {
                d.iter()
                    .enumerate()
                    .map(|(i, m)| m * (i % self.levels) as f64)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Mean karma of one type, conditioned on the type.
    pub fn type_mean_karma(&self, type_index: usize) -> f64 {
        let d = &self.d[type_index];
        let mass: f64 = d.iter().sum();
        let total: f64 = d
            .iter()
            .enumerate()
            .map(|(i, m)| m * (i % self.levels) as f64)
            .sum();
        total / mass
    }

    /// Mean bid at `(u, k)`.
    pub fn mean_bid(&self, type_index: usize, u: usize, k: usize) -> f64 {
        self.policy_row(type_index, u, k)
            .iter()
            .enumerate()
            .map(|(b, p)| b as f64 * p)
            .sum()
    }

    /// Most likely bid at `(u, k)`; the lowest bid wins exact ties.
    pub fn modal_bid(&self, type_index: usize, u: usize, k: usize) -> usize {
        let row = self.policy_row(type_index, u, k);
        let mut best = 0;
        for (b, p) in row.iter().enumerate() {
            if *p > row[best] {
                best = b;
            }
        }
        best
    }

    /// Mass of urgency state `u` summed over karma.
    pub fn urgency_mass(&self, type_index: usize, u: usize) -> f64 {
        self.d[type_index][u * self.levels..(u + 1) * self.levels]
            .iter()
            .sum()
    }

    /// Mean karma conditioned on `(type, u)`.
    pub fn conditional_mean_karma(&self, type_index: usize, u: usize) -> f64 {
        let row = &self.d[type_index][u * self.levels..(u + 1) * self.levels];
        let mass: f64 = row.iter().sum();
        row.iter()
            .enumerate()
            .map(|(k, m)| k as f64 * m)
            .sum::<f64>()
            / mass
    }
}

fn uniform_policy(n_u: usize, levels: usize) -> Vec<f64> {
    let mut pi = vec![0.0; n_u * levels * levels];
    for u in 0..n_u {
        for k in 0..levels {
            let p = 1.0 / (k + 1) as f64;
            let start = (u * levels + k) * levels;
            pi[start..=start + k].iter_mut().for_each(|v| *v = p);
        }
    }
    pi
}
