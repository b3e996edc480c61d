//! Discretized perturbed best-response dynamics over the social state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KarmaError, Result};
use crate::linalg::stationary_distribution;
use crate::model::{residual_with_kernel, Game, MarketKernel, SocialState, TypeKernel};
use crate::solver::params::SolverParams;
use crate::solver::response::{perturbed_best_response_into, q_from_settled, settled_continuation};
use crate::solver::value::{
    discounted_direct, discounted_iteration, relative_direct, relative_iteration, PolicyOperator,
    TypeValue, ValueTable,
};

/// Karma levels above this fraction of `k_max` count as the truncation tail.
const TAIL_FRACTION: f64 = 0.9;
const TAIL_WARN: f64 = 1e-4;
/// A window whose residual is above this fraction of its starting residual
/// counts as stalled.
const STALL_RATIO: f64 = 0.9;
const TILT_BOUND: f64 = 5.0;
const TILT_BISECTIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Largest per-type `||d P - d||_1`.
    pub stationarity_residual: f64,
    /// Largest `|pi~ - pi|` over all types, states and bids.
    pub br_gap: f64,
    pub kp_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub mean_karma: f64,
    /// Mass in the top decile of karma levels.
    pub tail_mass: f64,
    pub value_sweeps: usize,
    /// Whether the last policy evaluation met `v_tol` for every type.
    pub value_converged: bool,
    /// Policy update rate in effect when the search stopped.
    pub final_eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub social_state: SocialState,
    pub value: ValueTable,
    pub diagnostics: Diagnostics,
}

/// One line of the solver's progress stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub stationarity_residual: f64,
    pub br_gap: f64,
    pub kp_residual: f64,
    pub mean_karma: f64,
    pub value_sweeps: usize,
    pub eta: f64,
}

/// Everything computed at one social state before it is advanced.
#[derive(Debug, Clone)]
pub struct StepAnalysis {
    pub kernel: MarketKernel,
    pub values: Vec<TypeValue>,
    /// Perturbed best response per type, laid out like the policy.
    pub perturbed: Vec<Vec<f64>>,
    /// `d P` per type.
    pub pushed: Vec<Vec<f64>>,
    /// Where each type's distribution moves: `d P`, or the stationary law
    /// of the current chain under a direct solve.
    pub target: Vec<Vec<f64>>,
    pub stationarity_residual: f64,
    pub br_gap: f64,
    pub kp_residual: f64,
    pub value_sweeps: usize,
    pub value_converged: bool,
}

struct TypeAnalysis {
    value: TypeValue,
    perturbed: Vec<f64>,
    pushed: Vec<f64>,
    target: Vec<f64>,
    stationarity: f64,
    gap: f64,
    sweeps: usize,
    residual: f64,
    converged: bool,
}

pub fn analyze(
    game: &Game,
    state: &SocialState,
    params: &SolverParams,
    warm: Option<&[TypeValue]>,
) -> StepAnalysis {
    analyze_at(game, state, params, warm, params.v_tol)
}

/// Like [`analyze`], with policy evaluation stopped at `value_tol`.
/// `value_converged` still refers to `params.v_tol`.
fn analyze_at(
    game: &Game,
    state: &SocialState,
    params: &SolverParams,
    warm: Option<&[TypeValue]>,
    value_tol: f64,
) -> StepAnalysis {
    let eval_params = SolverParams {
        v_tol: value_tol.max(params.v_tol),
        ..params.clone()
    };
    let kernel = MarketKernel::new(game, state);
    let per_type: Vec<TypeAnalysis> = (0..game.n_types())
        .into_par_iter()
        .map(|t| {
            let mut ta = analyze_type(game, &kernel, state, &eval_params, t, warm.map(|w| &w[t]));
            ta.converged &= ta.residual <= params.v_tol;
            ta
        })
        .collect();
    let kp_residual = residual_with_kernel(&kernel, state);
    let mut analysis = StepAnalysis {
        kernel,
        values: Vec::with_capacity(per_type.len()),
        perturbed: Vec::with_capacity(per_type.len()),
        pushed: Vec::with_capacity(per_type.len()),
        target: Vec::with_capacity(per_type.len()),
        stationarity_residual: 0.0,
        br_gap: 0.0,
        kp_residual,
        value_sweeps: 0,
        value_converged: true,
    };
    for ta in per_type {
        analysis.stationarity_residual = analysis.stationarity_residual.max(ta.stationarity);
        analysis.br_gap = analysis.br_gap.max(ta.gap);
        analysis.value_sweeps += ta.sweeps;
        analysis.value_converged &= ta.converged;
        analysis.values.push(ta.value);
        analysis.perturbed.push(ta.perturbed);
        analysis.pushed.push(ta.pushed);
        analysis.target.push(ta.target);
    }
    analysis
}

fn analyze_type(
    game: &Game,
    kernel: &MarketKernel,
    state: &SocialState,
    params: &SolverParams,
    t: usize,
    warm: Option<&TypeValue>,
) -> TypeAnalysis {
    let agent = game.agent_type(t);
    let levels = kernel.levels();
    let n_u = agent.urgency.len();
    let tk = TypeKernel::new(game, kernel, state, t);
    let op = PolicyOperator::new(game, kernel, &tk, t);
    let apply = |v: &[f64], out: &mut [f64]| op.apply(v, out);
    let average = agent.is_average_reward();
    let dense = params
        .direct_solve
        .applies(average)
        .then(|| tk.dense(&op.rows, kernel));
    let direct = dense.as_deref().and_then(|p| {
        if average {
            relative_direct(op.reward(), p)
        } else {
            discounted_direct(op.reward(), p, agent.discount)
        }
    });
    let eval = match direct {
        Some(eval) => eval,
        None if average => {
            let warm = warm.and_then(|w| match w {
                TypeValue::AverageReward { relative, .. } => Some(relative.as_slice()),
                _ => None,
            });
            relative_iteration(op.reward(), apply, params, warm, false)
        }
        None => {
            let warm = warm.and_then(|w| match w {
                TypeValue::Discounted { values } => Some(values.as_slice()),
                _ => None,
            });
            discounted_iteration(op.reward(), apply, agent.discount, params, warm, false)
        }
    };
    let weight = if average { 1.0 } else { agent.discount };

    let settled = settled_continuation(game, kernel, t, eval.value.continuation());
    let pi = state.policy(t);
    let mut perturbed = vec![0.0; pi.len()];
    let mut gap: f64 = 0.0;
    let mut scratch = Vec::new();
    let mut q = Vec::new();
    for u in 0..n_u {
        let urgency = agent.urgency.value(u);
        let settled_u = &settled[u * levels..(u + 1) * levels];
        for k in 0..levels {
            q_from_settled(kernel, urgency, weight, settled_u, k, &mut scratch, &mut q);
            let start = (u * levels + k) * levels;
            let row = &mut perturbed[start..=start + k];
            perturbed_best_response_into(&q, params.lambda, row);
            for (a, b) in row.iter().zip(&pi[start..=start + k]) {
                gap = gap.max((a - b).abs());
            }
        }
    }

    let d = state.distribution(t);
    let mut pushed = vec![0.0; d.len()];
    tk.push(&op.rows, kernel, d, &mut pushed);
    let stationarity = pushed.iter().zip(d).map(|(a, b)| (a - b).abs()).sum();
    let target = dense
        .and_then(|p| stationary_distribution(&p, d.len()))
        .map(|mut x| {
            x.iter_mut().for_each(|v| *v *= agent.share);
            x
        });

    TypeAnalysis {
        value: eval.value,
        perturbed,
        target: target.unwrap_or_else(|| pushed.clone()),
        pushed,
        stationarity,
        gap,
        sweeps: eval.sweeps,
        residual: eval.residual,
        converged: eval.converged,
    }
}

/// Applies one Euler step of the dynamics using a precomputed analysis.
pub fn advance(
    game: &Game,
    state: &SocialState,
    analysis: &StepAnalysis,
    params: &SolverParams,
) -> SocialState {
    advance_at(game, state, analysis, params.dt, params.eta)
}

fn advance_at(
    game: &Game,
    state: &SocialState,
    analysis: &StepAnalysis,
    dt: f64,
    eta: f64,
) -> SocialState {
    let mut next = state.clone();
    let step = eta * dt;
    let targets = mean_preserving_targets(game, state, analysis);
    for t in 0..game.n_types() {
        let share = game.agent_type(t).share;
        let d = next.distribution_mut(t);
        for (x, p) in d.iter_mut().zip(&targets[t]) {
            *x = (1.0 - dt) * *x + dt * p;
        }
        let total: f64 = d.iter().sum();
        d.iter_mut().for_each(|x| *x *= share / total);

        let pi = next.policy_mut(t);
        for (x, p) in pi.iter_mut().zip(&analysis.perturbed[t]) {
            *x = (1.0 - step) * *x + step * p;
        }
    }
    next
}

/// Stationary laws of the current chains fix the shape of the distribution
/// but not the amount of karma in circulation. Direct-solve targets are
/// tilted by a common `exp(theta k)` so the population keeps its current
/// mean karma; `d P` targets already do.
fn mean_preserving_targets<'a>(
    game: &Game,
    state: &SocialState,
    analysis: &'a StepAnalysis,
) -> std::borrow::Cow<'a, [Vec<f64>]> {
    let tilted: Vec<bool> = (0..game.n_types())
        .map(|t| analysis.target[t] != analysis.pushed[t])
        .collect();
    if !tilted.contains(&true) {
        return std::borrow::Cow::Borrowed(&analysis.target);
    }
    let levels = game.levels();
    let goal = state.mean_karma();
    let tilt = |theta: f64| -> Vec<Vec<f64>> {
        (0..game.n_types())
            .map(|t| {
                let target = &analysis.target[t];
                if !tilted[t] {
                    return target.clone();
                }
                let top = target
                    .iter()
                    .enumerate()
                    .filter(|(_, x)| **x > 0.0)
                    .map(|(i, _)| theta * (i % levels) as f64)
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut out: Vec<f64> = target
                    .iter()
                    .enumerate()
                    .map(|(i, x)| x * (theta * (i % levels) as f64 - top).exp())
                    .collect();
                let total: f64 = out.iter().sum();
                let share = game.agent_type(t).share;
                out.iter_mut().for_each(|x| *x *= share / total);
                out
            })
            .collect()
    };
    let mean = |targets: &[Vec<f64>]| -> f64 {
        targets
            .iter()
            .flat_map(|d| d.iter().enumerate())
            .map(|(i, x)| (i % levels) as f64 * x)
            .sum()
    };
    let (mut lo, mut hi) = (-TILT_BOUND, TILT_BOUND);
    for _ in 0..TILT_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mean(&tilt(mid)) < goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    std::borrow::Cow::Owned(tilt(0.5 * (lo + hi)))
}

/// One step of the discretized dynamics.
pub fn evolution_step(
    game: &Game,
    state: &SocialState,
    params: &SolverParams,
) -> Result<(SocialState, StepAnalysis)> {
    params.validate()?;
    state.validate(game)?;
    let analysis = analyze(game, state, params, None);
    Ok((advance(game, state, &analysis, params), analysis))
}

/// Searches for a stationary Nash equilibrium of a game whose types all
/// discount the future (`alpha < 1`).
pub fn solve_equilibrium(
    game: &Game,
    params: &SolverParams,
    init: Option<SocialState>,
) -> Result<EquilibriumResult> {
    solve_equilibrium_with(game, params, init, |_| {})
}

/// Average-reward variant for games whose types all have `alpha = 1`.
pub fn solve_equilibrium_average_reward(
    game: &Game,
    params: &SolverParams,
    init: Option<SocialState>,
) -> Result<EquilibriumResult> {
    solve_equilibrium_average_reward_with(game, params, init, |_| {})
}

pub fn solve_equilibrium_with(
    game: &Game,
    params: &SolverParams,
    init: Option<SocialState>,
    observer: impl FnMut(&IterationRecord),
) -> Result<EquilibriumResult> {
    if let Some(t) = game.types().iter().find(|t| t.is_average_reward()) {
        return Err(KarmaError::AverageRewardRequired(t.discount));
    }
    run(game, params, init, observer)
}

pub fn solve_equilibrium_average_reward_with(
    game: &Game,
    params: &SolverParams,
    init: Option<SocialState>,
    observer: impl FnMut(&IterationRecord),
) -> Result<EquilibriumResult> {
    if let Some(t) = game.types().iter().find(|t| !t.is_average_reward()) {
        return Err(KarmaError::DiscountedRequired(t.discount));
    }
    run(game, params, init, observer)
}

/// Dispatches on the game's discount factors.
pub fn solve(
    game: &Game,
    params: &SolverParams,
    init: Option<SocialState>,
    observer: impl FnMut(&IterationRecord),
) -> Result<EquilibriumResult> {
    if game.all_average_reward() {
        solve_equilibrium_average_reward_with(game, params, init, observer)
    } else {
        solve_equilibrium_with(game, params, init, observer)
    }
}

fn run(
    game: &Game,
    params: &SolverParams,
    init: Option<SocialState>,
    mut observer: impl FnMut(&IterationRecord),
) -> Result<EquilibriumResult> {
    params.validate()?;
    let mut state = match init {
        Some(s) => {
            s.validate(game)?;
            s
        }
        None => SocialState::initial(game),
    };
    let mut warm: Option<Vec<TypeValue>> = None;
    let mut total_sweeps = 0;
    let mut eta = params.eta;
    let eta_floor = params.eta_min.min(params.eta);
    let mut merit = f64::INFINITY;
    let mut window_start = f64::INFINITY;
    for iteration in 1..=params.max_iters {
        let value_tol = if merit.is_finite() {
            params.value_tol_ratio * merit
        } else {
            params.v_tol
        };
        let analysis = analyze_at(game, &state, params, warm.as_deref(), value_tol);
        total_sweeps += analysis.value_sweeps;
        observer(&IterationRecord {
            iteration,
            stationarity_residual: analysis.stationarity_residual,
            br_gap: analysis.br_gap,
            kp_residual: analysis.kp_residual,
            mean_karma: state.mean_karma(),
            value_sweeps: analysis.value_sweeps,
            eta,
        });
        let converged = analysis.stationarity_residual <= params.fp_tol
            && analysis.br_gap <= params.fp_tol
            && analysis.value_converged;
        if converged || iteration == params.max_iters {
            let diagnostics = (iteration, converged, total_sweeps, eta);
            return Ok(finish(game, state, analysis, diagnostics));
        }
        merit = analysis.stationarity_residual.max(analysis.br_gap);
        if iteration % params.stall_window == 1 || params.stall_window == 1 {
            // Oscillating dynamics stop shrinking the residuals; a slower
            // policy update damps them.
            if merit > STALL_RATIO * window_start && eta > eta_floor {
                eta = (eta * params.eta_decay).max(eta_floor);
                tracing::debug!(iteration, eta, merit, "residuals stalled; reducing eta");
            }
            window_start = merit;
        }
        state = advance_at(game, &state, &analysis, params.dt, eta);
        warm = Some(analysis.values);
    }
    unreachable!("max_iters is positive")
}

fn finish(
    game: &Game,
    state: SocialState,
    analysis: StepAnalysis,
    (iterations, converged, value_sweeps, final_eta): (usize, bool, usize, f64),
) -> EquilibriumResult {
    let tail_mass = tail_mass(game, &state);
    if tail_mass > TAIL_WARN {
        tracing::warn!(
            tail_mass,
            k_max = game.k_max(),
            "stationary mass near the karma truncation is not negligible; consider a larger k_max"
        );
    }
    EquilibriumResult {
        diagnostics: Diagnostics {
            stationarity_residual: analysis.stationarity_residual,
            br_gap: analysis.br_gap,
            kp_residual: analysis.kp_residual,
            iterations,
            converged,
            mean_karma: state.mean_karma(),
            tail_mass,
            value_sweeps,
            value_converged: analysis.value_converged,
            final_eta,
        },
        value: ValueTable {
            types: analysis.values,
        },
        social_state: state,
    }
}

pub fn tail_mass(game: &Game, state: &SocialState) -> f64 {
    let levels = game.levels();
    let start = ((TAIL_FRACTION * game.k_max() as f64).floor() as usize + 1).min(levels);
    (0..game.n_types())
        .map(|t| {
            (0..state.n_urgency(t))
                .map(|u| {
                    state.distribution(t)[u * levels + start..(u + 1) * levels]
                        .iter()
                        .sum::<f64>()
                })
                .sum::<f64>()
        })
        .sum()
}

/// Every agent bids all of its karma. This is the dominant strategy of
/// myopic agents under pay-bid-to-peer, where the dynamics are numerically
/// hard to converge.
pub fn bid_all_policy(game: &Game, distribution: Option<&SocialState>) -> Result<SocialState> {
    let levels = game.levels();
    let base = distribution
        .cloned()
        .unwrap_or_else(|| SocialState::initial(game));
    let mut d = Vec::new();
    let mut pi = Vec::new();
    for t in 0..game.n_types() {
        let n_u = game.agent_type(t).urgency.len();
        let mut p = vec![0.0; n_u * levels * levels];
        for u in 0..n_u {
            for k in 0..levels {
                p[(u * levels + k) * levels + k] = 1.0;
            }
        }
        d.push(base.distribution(t).to_vec());
        pi.push(p);
    }
    SocialState::new(game, d, pi)
}
