//! Welfare measures: efficiency, ex-post access and reward fairness, and
//! ex-ante per-type access and reward.
//!
//! Analytic measures read a social state; empirical ones read the per-agent
//! totals of a simulation run ([`RunSummary`], or [`SimTrace::summarize`]).
//! Fairness measures are negated population standard deviations.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{KarmaError, Result};
use crate::model::{policy_reward, Game, MarketKernel, SocialState};
use crate::simulation::{RunSummary, SimTrace};
use crate::solver::EquilibriumResult;

/// Expected reward per agent and round, `sum d[u, k] R[u, k]` over types.
/// Equal to the mean of `(zeta_i + zeta_j) / 2` over competitions.
pub fn efficiency_at_equilibrium(game: &Game, state: &SocialState) -> f64 {
    let kernel = MarketKernel::new(game, state);
    let levels = game.levels();
    (0..game.n_types())
        .map(|t| {
            let n_u = game.agent_type(t).urgency.len();
            (0..n_u * levels)
                .map(|i| {
                    let mass = state.distribution(t)[i];
                    if mass == 0.0 {
                        0.0
                    } else {
                        mass * policy_reward(game, &kernel, state, t, i / levels, i % levels)
                    }
                })
                .sum::<f64>()
        })
        .sum()
}

pub fn equilibrium_efficiency(game: &Game, result: &EquilibriumResult) -> f64 {
    efficiency_at_equilibrium(game, &result.social_state)
}

/// Stationary urgency values of the population and their probabilities.
fn urgency_mixture(game: &Game) -> Vec<(f64, f64)> {
    game.types()
        .iter()
        .flat_map(|t| {
            t.urgency
                .stationary()
                .iter()
                .enumerate()
                .map(move |(u, p)| (t.urgency.value(u), t.share * p))
        })
        .collect()
}

/// COIN efficiency, `-E[u] / 2`.
pub fn coin_efficiency(game: &Game) -> f64 {
    -urgency_mixture(game)
        .iter()
        .map(|(u, p)| u * p)
        .sum::<f64>()
        / 2.0
}

/// DICT efficiency, `-E[min(u_i, u_j)] / 2` for independent draws from the
/// stationary urgency mixture. Urgency values are compared, not states.
pub fn dict_efficiency(game: &Game) -> f64 {
    let mix = urgency_mixture(game);
    let mut total = 0.0;
    for (a, pa) in &mix {
        for (b, pb) in &mix {
            total += pa * pb * a.min(*b);
        }
    }
    -total / 2.0
}

/// Per-type DICT access: the probability of winning against an opponent
/// drawn from the population, with urgency ties broken by a fair coin.
pub fn dict_access(game: &Game) -> Vec<f64> {
    let mix = urgency_mixture(game);
    game.types()
        .iter()
        .map(|t| {
            let own = t.urgency.stationary();
            let mut p = 0.0;
            for (u, pu) in own.iter().enumerate() {
                let a = t.urgency.value(u);
                for (b, pb) in &mix {
                    p += pu
                        * pb
                        * if a > *b {
                            1.0
                        } else if a == *b {
                            0.5
                        } else {
                            0.0
                        };
                }
            }
            p
        })
        .collect()
}

fn check(summary: &RunSummary) -> Result<usize> {
    let n = summary.wins.len();
    if n == 0 || summary.interactions == 0 {
        return Err(KarmaError::EmptyTrace);
    }
    Ok(n)
}

fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean over competitions of the two agents' average reward.
pub fn empirical_efficiency(summary: &RunSummary) -> Result<f64> {
    let n = check(summary)?;
    Ok(summary.reward_sums.iter().sum::<f64>() / (n * summary.interactions) as f64)
}

/// `-std` over agents of the fraction of competitions won. Every agent
/// takes part in every round, so the divisor is the round count.
pub fn access_fairness(summary: &RunSummary) -> Result<f64> {
    check(summary)?;
    let t = summary.interactions as f64;
    Ok(-population_std(summary.wins.iter().map(|w| *w as f64 / t)))
}

/// `-std` over agents of the mean reward per competition.
pub fn reward_fairness(summary: &RunSummary) -> Result<f64> {
    check(summary)?;
    let t = summary.interactions as f64;
    Ok(-population_std(summary.reward_sums.iter().map(|r| r / t)))
}

pub fn trace_metrics(trace: &SimTrace) -> Result<RunMetrics> {
    run_metrics(&trace.summarize()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeWelfare {
    /// Probability of being selected in a competition.
    pub access: f64,
    /// Mean reward per competition.
    pub reward: f64,
}

/// Long-run access probability and mean reward of each type at a social
/// state.
pub fn ex_ante_metrics(game: &Game, state: &SocialState) -> Vec<TypeWelfare> {
    let kernel = MarketKernel::new(game, state);
    let selection = kernel.selection();
    let levels = game.levels();
    (0..game.n_types())
        .map(|t| {
            let share = game.agent_type(t).share;
            let n_u = game.agent_type(t).urgency.len();
            let mut access = 0.0;
            let mut reward = 0.0;
            for i in 0..n_u * levels {
                let mass = state.distribution(t)[i] / share;
                if mass == 0.0 {
                    continue;
                }
                let (u, k) = (i / levels, i % levels);
                let row = state.policy_row(t, u, k);
                access += mass * row.iter().zip(selection).map(|(p, g)| p * g).sum::<f64>();
                reward += mass * policy_reward(game, &kernel, state, t, u, k);
            }
            TypeWelfare { access, reward }
        })
        .collect()
}

/// Measures of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub efficiency: f64,
    pub access_fairness: f64,
    pub reward_fairness: f64,
    /// Empirical access fraction and mean reward, averaged over each type's agents.
    pub per_type: Vec<TypeWelfare>,
}

pub fn run_metrics(summary: &RunSummary) -> Result<RunMetrics> {
    let n = check(summary)?;
    let t = summary.interactions as f64;
    let n_types = summary.agent_types.iter().max().map_or(0, |m| m + 1);
    let mut per_type = vec![
        TypeWelfare {
            access: 0.0,
            reward: 0.0
        };
        n_types
    ];
    let mut counts = vec![0usize; n_types];
    for i in 0..n {
        let ty = summary.agent_types[i];
        counts[ty] += 1;
        per_type[ty].access += summary.wins[i] as f64 / t;
        per_type[ty].reward += summary.reward_sums[i] / t;
    }
    for (w, c) in per_type.iter_mut().zip(&counts) {
        w.access /= *c as f64;
        w.reward /= *c as f64;
    }
    Ok(RunMetrics {
        efficiency: empirical_efficiency(summary)?,
        access_fairness: access_fairness(summary)?,
        reward_fairness: reward_fairness(summary)?,
        per_type,
    })
}

/// Mean over repeats with a Student-t 95% confidence half-width, absent
/// below two repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_halfwidth: Option<f64>,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let ci_halfwidth = (n >= 2).then(|| {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .expect("positive degrees of freedom")
                .inverse_cdf(0.975);
            t * (var / n as f64).sqrt()
        });
        Self { mean, ci_halfwidth }
    }

    /// Half-width, or 0 when absent.
    pub fn ci(&self) -> f64 {
        self.ci_halfwidth.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeEstimate {
    pub access: Estimate,
    pub reward: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareReport {
    pub label: String,
    pub n_repeats: usize,
    pub efficiency: Estimate,
    pub access_fairness: Estimate,
    pub reward_fairness: Estimate,
    pub per_type: Vec<TypeEstimate>,
}

pub fn aggregate_runs(label: &str, summaries: &[RunSummary]) -> Result<WelfareReport> {
    if summaries.is_empty() {
        return Err(KarmaError::EmptyTrace);
    }
    let runs = summaries
        .iter()
        .map(run_metrics)
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate_metrics(label, &runs))
}

pub fn aggregate_metrics(label: &str, runs: &[RunMetrics]) -> WelfareReport {
    let field = |f: &dyn Fn(&RunMetrics) -> f64| {
        Estimate::from_samples(&runs.iter().map(f).collect::<Vec<_>>())
    };
    let n_types = runs.iter().map(|r| r.per_type.len()).min().unwrap_or(0);
    WelfareReport {
        label: label.to_string(),
        n_repeats: runs.len(),
        efficiency: field(&|r| r.efficiency),
        access_fairness: field(&|r| r.access_fairness),
        reward_fairness: field(&|r| r.reward_fairness),
        per_type: (0..n_types)
            .map(|t| TypeEstimate {
                access: field(&|r| r.per_type[t].access),
                reward: field(&|r| r.per_type[t].reward),
            })
            .collect(),
    }
}

impl WelfareReport {
    pub fn csv_header(n_types: usize) -> Vec<String> {
        let mut h: Vec<String> = [
            "label",
            "n_repeats",
            "eff",
            "eff_ci",
            "af",
            "af_ci",
            "rf",
            "rf_ci",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for t in 0..n_types {
            for col in ["access", "access_ci", "reward", "reward_ci"] {
                h.push(format!("type{t}_{col}"));
            }
        }
        h
    }

    /// One flat row matching [`WelfareReport::csv_header`]; absent
    /// confidence intervals are empty cells.
    pub fn csv_record(&self) -> Vec<String> {
        let ci = |e: &Estimate| e.ci_halfwidth.map_or_else(String::new, |c| c.to_string());
        let mut row = vec![self.label.clone(), self.n_repeats.to_string()];
        for e in [
            &self.efficiency,
            &self.access_fairness,
            &self.reward_fairness,
        ] {
            row.push(e.mean.to_string());
            row.push(ci(e));
        }
        for t in &self.per_type {
            for e in [&t.access, &t.reward] {
                row.push(e.mean.to_string());
                row.push(ci(e));
            }
        }
        row
    }
}
