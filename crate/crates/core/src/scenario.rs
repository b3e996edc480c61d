//! Scenario files (TOML) and bundled presets.
//!
//! A scenario holds the agent types, the mechanism, solver and simulation
//! settings, and the allocation schemes to compare. Unknown keys are
//! rejected. Validation reports every problem with its field path.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{KarmaError, Result};
use crate::model::{AgentType, Game, MechanismConfig, PaymentRule, SocialState, Tax, UrgencyChain};
use crate::simulation::{Scheme, SimulationConfig};
use crate::solver::SolverParams;

/// Mechanism as written in a scenario; `k_max` defaults to `15 * k_bar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismSpec {
    pub payment_rule: PaymentRule,
    pub k_bar: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tax: Option<Tax>,
}

impl MechanismSpec {
    pub fn config(&self) -> MechanismConfig {
        let mut m = MechanismConfig::new(self.payment_rule, self.k_bar);
        if let Some(k_max) = self.k_max {
            m = m.with_k_max(k_max);
        }
        m.tax = self.tax;
        m
    }
}

fn default_name() -> String {
    "scenario".into()
}

fn all_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

/// Names accepted by [`Scenario::set_param`].
pub const PARAMS: [&str; 12] = [
    "alpha",
    "discount",
    "k_bar",
    "k_max",
    "tax_coefficient",
    "tax_exponent",
    "lambda",
    "eta",
    "dt",
    "n_agents",
    "interactions",
    "repeats",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub types: Vec<AgentType>,
    pub mechanism: MechanismSpec,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default = "all_schemes")]
    pub schemes: Vec<Scheme>,
    /// Initial social state for the solver: a JSON file, or a directory
    /// holding `distribution.csv` and `policy.csv` from a previous solve.
    /// Relative paths are resolved against the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<PathBuf>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| KarmaError::InvalidScenario(vec![e.to_string()]))?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Reads and validates a scenario file, resolving `warm_start` against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| KarmaError::Io(format!("{}: {e}", path.display())))?;
        let mut scenario = Self::from_toml_str(&text)?;
        if let (Some(ws), Some(dir)) = (scenario.warm_start.as_mut(), path.parent()) {
            if ws.is_relative() {
                *ws = dir.join(&*ws);
            }
        }
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| KarmaError::Scenario(e.to_string()))
    }

    /// Collects every violated invariant; on success returns the game.
    pub fn validate(&self) -> Result<Game> {
        let mut issues = Vec::new();
        if self.types.is_empty() {
            issues.push("types: at least one agent type is required".to_string());
        }
        for (i, t) in self.types.iter().enumerate() {
            if !(0.0..=1.0).contains(&t.discount) {
                issues.push(format!(
                    "types[{i}].discount: {} outside [0, 1]",
                    t.discount
                ));
            }
            if !(t.share > 0.0 && t.share <= 1.0) {
                issues.push(format!("types[{i}].share: {} outside (0, 1]", t.share));
            }
        }
        let total: f64 = self.types.iter().map(|t| t.share).sum();
        if !self.types.is_empty() && (total - 1.0).abs() > 1e-12 {
            issues.push(format!("types: shares sum to {total}, not 1"));
        }
        let mechanism = self.mechanism.config();
        if let Err(e) = mechanism.validate() {
            issues.push(format!("mechanism: {e}"));
        }
        if let Err(e) = self.solver.validate() {
            issues.push(format!("solver: {e}"));
        }
        if let Err(e) = self.simulation.validate() {
            issues.push(format!("simulation: {e}"));
        }
        let mut seen = HashSet::new();
        for s in &self.schemes {
            if !seen.insert(*s) {
                issues.push(format!("schemes: {s} listed twice"));
            }
        }
        if !issues.is_empty() {
            return Err(KarmaError::InvalidScenario(issues));
        }
        Game::new(self.types.clone(), mechanism)
            .map_err(|e| KarmaError::InvalidScenario(vec![e.to_string()]))
    }

    pub fn game(&self) -> Result<Game> {
        self.validate()
    }

    /// Loads and validates the warm-start state, if any.
    pub fn warm_start_state(&self, game: &Game) -> Result<Option<SocialState>> {
        let Some(path) = &self.warm_start else {
            return Ok(None);
        };
        let wrap = |e: KarmaError| match e {
            KarmaError::InvalidSocialState { path, reason } => {
                KarmaError::InvalidScenario(vec![format!("warm_start.{path}: {reason}")])
            }
            other => KarmaError::InvalidScenario(vec![format!("warm_start: {other}")]),
        };
        let read = |p: &Path| {
            std::fs::read(p).map_err(|e| {
                KarmaError::InvalidScenario(vec![format!("warm_start: {}: {e}", p.display())])
            })
        };
        let state = if path.is_dir() {
            let d = read(&path.join("distribution.csv"))?;
            let pi = read(&path.join("policy.csv"))?;
            crate::io::read_state_csv(game, &d, &pi).map_err(wrap)?
        } else {
            let state: SocialState =
                serde_json::from_slice(&read(path)?).map_err(|e| wrap(e.into()))?;
            state.validate(game).map_err(wrap)?;
            state
        };
        Ok(Some(state))
    }

    /// Applies a named numeric override, as used by sweeps and command-line
    /// flags. Type-level names apply to every type.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        let int = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(KarmaError::Scenario(format!(
                    "{name} needs a non-negative integer, got {v}"
                )))
            }
        };
        match name {
            "alpha" | "discount" => self.types.iter_mut().for_each(|t| t.discount = value),
            "k_bar" => {
                self.mechanism.k_bar = int(value)?;
                self.mechanism.k_max = None;
            }
            "k_max" => self.mechanism.k_max = Some(int(value)?),
            "tax_coefficient" => {
                if value == 0.0 {
                    self.mechanism.tax = None;
                } else {
                    let exponent = self.mechanism.tax.map_or(2.0, |t| t.exponent);
                    self.mechanism.tax = Some(Tax {
                        coefficient: value,
                        exponent,
                    });
                }
            }
            "tax_exponent" => {
                let coefficient = self.mechanism.tax.map_or(0.0, |t| t.coefficient);
                self.mechanism.tax = Some(Tax {
                    coefficient,
                    exponent: value,
                });
            }
            "lambda" => self.solver.lambda = value,
            "eta" => self.solver.eta = value,
            "dt" => self.solver.dt = value,
            "n_agents" => self.simulation.n_agents = int(value)?,
            "interactions" => self.simulation.interactions = int(value)?,
            "repeats" => self.simulation.repeats = int(value)?,
            other => {
                return Err(KarmaError::Scenario(format!(
                    "unknown parameter {other:?}; expected one of {}",
                    PARAMS.join(", ")
                )))
            }
        }
        Ok(())
    }
}

/// Urgency values `(1, 1, 10)`: a default state, an intermediate state
/// that turns urgent half of the time, and a one-round urgent state.
/// `escalation` is the probability of leaving the default state.
pub fn three_state_chain(escalation: f64) -> Result<UrgencyChain> {
    UrgencyChain::new(
        vec![1.0, 1.0, 10.0],
        vec![
            vec![1.0 - escalation, escalation, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![0.95, 0.05, 0.0],
        ],
    )
}

/// Escalation probability giving a stationary high-urgency fraction `f` in
/// [`three_state_chain`], which is `p / (0.95 + 3 p)`. Fractions of 1/3.95
/// and above are out of reach.
pub fn escalation_for_fraction(f: f64) -> Option<f64> {
    let p = 0.95 * f / (1.0 - 3.0 * f);
    (f > 0.0 && p > 0.0 && p <= 1.0).then_some(p)
}

/// Softmax rationality used by the invader presets.
pub const INVADER_LAMBDA: f64 = 50.0;

pub const PRESETS: [&str; 5] = [
    "case_study_5_2",
    "hetero_alpha",
    "hetero_alpha_taxed",
    "invaders_nominal",
    "invaders",
];

fn base(name: &str, types: Vec<AgentType>, mechanism: MechanismSpec) -> Scenario {
    Scenario {
        name: name.into(),
        types,
        mechanism,
        solver: SolverParams::default(),
        simulation: SimulationConfig::default(),
        schemes: all_schemes(),
        warm_start: None,
    }
}

fn pbs(k_bar: usize, tax: Option<Tax>) -> MechanismSpec {
    MechanismSpec {
        payment_rule: PaymentRule::Pbs,
        k_bar,
        k_max: None,
        tax,
    }
}

/// A bundled scenario by name; see [`PRESETS`].
pub fn preset(name: &str) -> Result<Scenario> {
    let default_chain = three_state_chain(0.05)?;
    let hetero = |tax| {
        base(
            name,
            vec![
                AgentType::new(default_chain.clone(), 0.7, 0.5),
                AgentType::new(default_chain.clone(), 0.99, 0.5),
            ],
            pbs(10, tax),
        )
    };
    let invader_p = |f: f64| {
        escalation_for_fraction(f)
            .ok_or_else(|| KarmaError::Scenario(format!("fraction {f} unreachable")))
    };
    // the faster-mixing invader chains cycle at lambda = 1000
    let smoothed = |mut s: Scenario| {
        s.solver.lambda = INVADER_LAMBDA;
        s
    };
    let scenario = match name {
        "case_study_5_2" => base(
            name,
            vec![AgentType::new(default_chain, 0.98, 1.0)],
            pbs(10, None),
        ),
        "hetero_alpha" => hetero(None),
        "hetero_alpha_taxed" => hetero(Some(Tax {
            coefficient: 0.005,
            exponent: 2.0,
        })),
        "invaders_nominal" => smoothed(base(
            name,
            vec![AgentType::new(
                three_state_chain(invader_p(0.1)?)?,
                0.98,
                1.0,
            )],
            pbs(10, None),
        )),
        "invaders" => smoothed(base(
            name,
            vec![
                AgentType::new(three_state_chain(invader_p(0.1)?)?, 0.98, 0.9),
                AgentType::new(three_state_chain(invader_p(0.2)?)?, 0.98, 0.1),
            ],
            pbs(10, None),
        )),
        other => {
            return Err(KarmaError::Scenario(format!(
                "unknown preset {other:?}; available: {}",
                PRESETS.join(", ")
            )))
        }
    };
    scenario.validate()?;
    Ok(scenario)
}
