use serde::{Deserialize, Serialize};

use crate::error::{KarmaError, Result};
use crate::model::urgency::UrgencyChain;

const SHARE_TOL: f64 = 1e-12;

/// How the selected agent's bid is settled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PaymentRule {
    /// Pay bid to peer: the winner pays its bid to the yielding agent.
    Pbp,
    /// Pay bid to society: the winner pays into a pool that is redistributed
    /// uniformly before the next round.
    Pbs,
}

impl std::fmt::Display for PaymentRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PaymentRule::Pbp => f.write_str("PBP"),
            PaymentRule::Pbs => f.write_str("PBS"),
        }
    }
}

impl std::str::FromStr for PaymentRule {
    type Err = KarmaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PBP" => Ok(PaymentRule::Pbp),
            "PBS" => Ok(PaymentRule::Pbs),
            other => Err(KarmaError::InvalidMechanism(format!(
                "unknown payment rule {other:?}"
            ))),
        }
    }
}

/// Progressive karma tax `h[k] = coefficient * k^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tax {
    pub coefficient: f64,
    pub exponent: f64,
}

impl Tax {
    pub fn amount(&self, karma: usize) -> f64 {
        if karma == 0 {
            0.0
        } else {
            self.coefficient * (karma as f64).powf(self.exponent)
        }
    }
}

/// Splits a non-negative real `x` into the integer pair `(floor, ceil)` and the
/// probability of the floor, chosen so the expectation equals `x`.
pub fn fractional_split(x: f64) -> (usize, usize, f64) {
    let lo = x.floor();
    let hi = x.ceil();
    (lo as usize, hi as usize, hi - x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentType {
    pub urgency: UrgencyChain,
    /// Future discount factor; exactly 1 selects the average-reward problem.
    pub discount: f64,
    pub share: f64,
}

impl AgentType {
    pub fn new(urgency: UrgencyChain, discount: f64, share: f64) -> Self {
        Self {
            urgency,
            discount,
            share,
        }
    }

    pub fn is_average_reward(&self) -> bool {
        self.discount == 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    pub payment_rule: PaymentRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tax: Option<Tax>,
    pub k_max: usize,
    pub k_bar: usize,
}

impl MechanismConfig {
    /// Untaxed mechanism with the default truncation `k_max = 15 k_bar`.
    pub fn new(payment_rule: PaymentRule, k_bar: usize) -> Self {
        Self {
            payment_rule,
            tax: None,
            k_max: 15 * k_bar,
            k_bar,
        }
    }

    pub fn with_k_max(mut self, k_max: usize) -> Self {
        self.k_max = k_max;
        self
    }

    pub fn with_tax(mut self, tax: Tax) -> Self {
        self.tax = Some(tax);
        self
    }

    /// Number of karma levels, `k_max + 1`.
    pub fn levels(&self) -> usize {
        self.k_max + 1
    }

    pub fn tax_amount(&self, karma: usize) -> f64 {
        self.tax.map_or(0.0, |t| t.amount(karma))
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_bar == 0 {
            return Err(KarmaError::InvalidMechanism(
                "k_bar must be positive".into(),
            ));
        }
        if self.k_max == 0 || self.k_bar > self.k_max {
            return Err(KarmaError::InvalidMechanism(format!(
                "need 0 < k_bar <= k_max, got k_bar = {}, k_max = {}",
                self.k_bar, self.k_max
            )));
        }
        if let Some(tax) = self.tax {
            if !(tax.coefficient >= 0.0 && tax.coefficient.is_finite()) {
                return Err(KarmaError::InvalidMechanism(
                    "tax coefficient must be finite and non-negative".into(),
                ));
            }
            if !(tax.exponent >= 1.0 && tax.exponent.is_finite()) {
                return Err(KarmaError::InvalidMechanism(
                    "tax exponent must be finite and at least 1".into(),
                ));
            }
            for k in 0..=self.k_max {
                let h = tax.amount(k);
                if !(0.0..=k as f64).contains(&h) {
                    return Err(KarmaError::InvalidMechanism(format!(
                        "tax h[{k}] = {h} outside [0, {k}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Validated agent types together with the mechanism they play under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Game {
    types: Vec<AgentType>,
    mechanism: MechanismConfig,
}

impl Game {
    pub fn new(types: Vec<AgentType>, mechanism: MechanismConfig) -> Result<Self> {
        validate_types(&types)?;
        mechanism.validate()?;
        Ok(Self { types, mechanism })
    }

    pub fn types(&self) -> &[AgentType] {
        &self.types
    }

    pub fn agent_type(&self, index: usize) -> &AgentType {
        &self.types[index]
    }

    pub fn mechanism(&self) -> &MechanismConfig {
        &self.mechanism
    }

    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn levels(&self) -> usize {
        self.mechanism.levels()
    }

    pub fn k_max(&self) -> usize {
        self.mechanism.k_max
    }

    pub fn k_bar(&self) -> usize {
        self.mechanism.k_bar
    }

    /// Largest urgency value over all types.
    pub fn max_urgency(&self) -> f64 {
        self.types
            .iter()
            .map(|t| t.urgency.max_value())
            .fold(0.0, f64::max)
    }

    /// Population-weighted stationary mean urgency.
    pub fn mean_urgency(&self) -> f64 {
        self.types
            .iter()
            .map(|t| t.share * t.urgency.mean_value())
            .sum()
    }

    pub fn all_average_reward(&self) -> bool {
        self.types.iter().all(AgentType::is_average_reward)
    }

    pub fn any_average_reward(&self) -> bool {
        self.types.iter().any(AgentType::is_average_reward)
    }

    /// Copy with a different mechanism, revalidated.
    pub fn with_mechanism(&self, mechanism: MechanismConfig) -> Result<Self> {
        Self::new(self.types.clone(), mechanism)
    }

    /// Copy with every type's discount factor replaced.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        let types = self
            .types
            .iter()
            .cloned()
            .map(|mut t| {
                t.discount = discount;
                t
            })
            .collect();
        Self::new(types, self.mechanism.clone())
    }
}

pub fn validate_types(types: &[AgentType]) -> Result<()> {
    if types.is_empty() {
        return Err(KarmaError::InvalidTypes(
            "at least one type required".into(),
        ));
    }
    for (i, t) in types.iter().enumerate() {
        if !(0.0..=1.0).contains(&t.discount) {
            return Err(KarmaError::InvalidTypes(format!(
                "type {i}: discount {} outside [0, 1]",
                t.discount
            )));
        }
        if !(t.share > 0.0 && t.share <= 1.0) {
            return Err(KarmaError::InvalidTypes(format!(
                "type {i}: share {} outside (0, 1]",
                t.share
            )));
        }
    }
    let total: f64 = types.iter().map(|t| t.share).sum();
    if (total - 1.0).abs() > SHARE_TOL {
        return Err(KarmaError::InvalidTypes(format!(
            "shares sum to {total}, expected 1"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> UrgencyChain {
        UrgencyChain::constant(1.0).unwrap()
    }

    #[test]
    fn default_truncation() {
        let m = MechanismConfig::new(PaymentRule::Pbs, 10);
        assert_eq!(m.k_max, 150);
        assert_eq!(m.levels(), 151);
        m.validate().unwrap();
    }

    #[test]
    fn rejects_k_bar_above_k_max() {
        let m = MechanismConfig::new(PaymentRule::Pbp, 10).with_k_max(5);
        assert!(m.validate().is_err());
    }

    #[test]
    fn tax_must_stay_below_karma() {
        let tax = Tax {
            coefficient: 0.005,
            exponent: 2.0,
        };
        let ok = MechanismConfig::new(PaymentRule::Pbs, 10).with_tax(tax);
        ok.validate().unwrap();
        // 0.005 k^2 > k once k > 200.
        let bad = ok.clone().with_k_max(250);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn split_preserves_expectation() {
        for x in [0.0, 0.25, 1.0, 1.25, 7.999, 12.5] {
            let (lo, hi, p_lo) = fractional_split(x);
            let mean = p_lo * lo as f64 + (1.0 - p_lo) * hi as f64;
            assert!((mean - x).abs() < 1e-12, "{x}");
        }
        assert_eq!(fractional_split(1.25), (1, 2, 0.75));
    }

    #[test]
    fn shares_must_sum_to_one() {
        let types = vec![
            AgentType::new(chain(), 0.9, 0.5),
            AgentType::new(chain(), 0.9, 0.4),
        ];
        assert!(validate_types(&types).is_err());
        let types = vec![
            AgentType::new(chain(), 0.9, 0.5),
            AgentType::new(chain(), 0.9, 0.5),
        ];
        validate_types(&types).unwrap();
    }

    #[test]
    fn payment_rule_parses() {
        assert_eq!("pbs".parse::<PaymentRule>().unwrap(), PaymentRule::Pbs);
        assert!("xyz".parse::<PaymentRule>().is_err());
    }
}
