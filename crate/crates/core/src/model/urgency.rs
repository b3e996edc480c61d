use serde::{Deserialize, Serialize};

use crate::error::{KarmaError, Result};
use crate::linalg;

const ROW_TOL: f64 = 1e-12;

/// Exogenous urgency process of one agent type.
///
/// States are identified by index. Two states may carry the same urgency
/// value and still behave differently through the transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChain", into = "RawChain")]
pub struct UrgencyChain {
    values: Vec<f64>,
    transition: Vec<f64>,
    stationary: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    values: Vec<f64>,
    transition: Vec<Vec<f64>>,
}

impl TryFrom<RawChain> for UrgencyChain {
    type Error = KarmaError;

    fn try_from(raw: RawChain) -> Result<Self> {
        UrgencyChain::new(raw.values, raw.transition)
    }
}

impl From<UrgencyChain> for RawChain {
    fn from(chain: UrgencyChain) -> Self {
        let n = chain.len();
        RawChain {
            transition: chain.transition.chunks(n).map(<[f64]>::to_vec).collect(),
            values: chain.values,
        }
    }
}

impl UrgencyChain {
    pub fn new(values: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(KarmaError::InvalidChain("no urgency states".into()));
        }
        if let Some(u) = values.iter().find(|u| !u.is_finite() || **u < 0.0) {
            return Err(KarmaError::InvalidChain(format!(
                "urgency value {u} is not finite and non-negative"
            )));
        }
        if transition.len() != n {
            return Err(KarmaError::InvalidChain(format!(
                "transition has {} rows, expected {n}",
                transition.len()
            )));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != n {
                return Err(KarmaError::InvalidChain(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(KarmaError::InvalidChain(format!(
                    "row {i} has an entry outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(KarmaError::InvalidChain(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
        }
        let flat: Vec<f64> = transition.into_iter().flatten().collect();
        if !is_irreducible(&flat, n) {
            return Err(KarmaError::InvalidChain("chain is not irreducible".into()));
        }
        let stationary = linalg::stationary_distribution(&flat, n)
            .ok_or_else(|| KarmaError::InvalidChain("no stationary distribution".into()))?;
        Ok(Self {
            values,
            transition: flat,
            stationary,
        })
    }

    /// Single-state chain with a fixed urgency.
    pub fn constant(value: f64) -> Result<Self> {
        Self::new(vec![value], vec![vec![1.0]])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, state: usize) -> f64 {
        self.values[state]
    }

    /// Probability of moving from `from` to `to`.
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.len() + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        let n = self.len();
        &self.transition[from * n..(from + 1) * n]
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Stationary mean urgency.
    pub fn mean_value(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.stationary)
            .map(|(u, p)| u * p)
            .sum()
    }
}

fn is_irreducible(p: &[f64], n: usize) -> bool {
    // Every state must reach every other state.
    (0..n).all(|start| {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && p[i * n + j] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case_chain() -> UrgencyChain {
        UrgencyChain::new(
            vec![1.0, 1.0, 10.0],
            vec![
                vec![0.95, 0.05, 0.0],
                vec![0.0, 0.5, 0.5],
                vec![0.95, 0.05, 0.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn duplicate_values_allowed() {
        let chain = case_chain();
        assert_eq!(chain.len(), 3);
        assert_eq!(chain.value(0), chain.value(1));
    }

    #[test]
    fn stationary_matches_hand_solution() {
        // pi_A = 19 pi_C, pi_B = 2 pi_C from the balance equations.
        let s = case_chain().stationary().to_vec();
        assert!((s[0] - 19.0 / 22.0).abs() < 1e-12);
        assert!((s[1] - 2.0 / 22.0).abs() < 1e-12);
        assert!((s[2] - 1.0 / 22.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_rows() {
        let err = UrgencyChain::new(vec![1.0, 2.0], vec![vec![0.5, 0.4], vec![0.5, 0.5]]);
        assert!(matches!(err, Err(KarmaError::InvalidChain(_))));
        let err = UrgencyChain::new(vec![1.0, 2.0], vec![vec![1.5, -0.5], vec![0.5, 0.5]]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_reducible() {
        let err = UrgencyChain::new(vec![1.0, 2.0], vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_negative_urgency() {
        assert!(UrgencyChain::constant(-1.0).is_err());
        assert!(UrgencyChain::constant(f64::NAN).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let chain = case_chain();
        let text = serde_json::to_string(&chain).unwrap();
        let back: UrgencyChain = serde_json::from_str(&text).unwrap();
        assert_eq!(chain, back);
    }
}
