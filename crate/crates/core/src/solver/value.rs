use serde::{Deserialize, Serialize};

use crate::error::{KarmaError, Result};
use crate::linalg::solve_dense;
use crate::model::{Game, MarketKernel, SocialState, TypeKernel};
use crate::solver::params::SolverParams;

/// Value of one type's policy, laid out as `[u * levels + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TypeValue {
    Discounted {
        values: Vec<f64>,
    },
    /// Average reward per round and relative values anchored at `(u_1, 0)`.
    AverageReward {
        gain: f64,
        relative: Vec<f64>,
    },
}

impl TypeValue {
    /// The vector used to score continuation karma.
    pub fn continuation(&self) -> &[f64] {
        match self {
            TypeValue::Discounted { values } => values,
            TypeValue::AverageReward { relative, .. } => relative,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.continuation().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub types: Vec<TypeValue>,
}

/// Outcome of one policy evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: TypeValue,
    pub sweeps: usize,
    pub residual: f64,
    pub converged: bool,
    /// Sup-norm change per sweep, for contraction checks.
    pub history: Vec<f64>,
}

/// `v -> P v` for one type's own policy, with its immediate rewards.
pub(crate) struct PolicyOperator<'a> {
    pub kernel: &'a MarketKernel,
    pub type_kernel: &'a TypeKernel,
    pub rows: Vec<&'a [f64]>,
}

impl<'a> PolicyOperator<'a> {
    pub fn new(
        game: &'a Game,
        kernel: &'a MarketKernel,
        type_kernel: &'a TypeKernel,
        type_index: usize,
    ) -> Self {
        let chain = &game.agent_type(type_index).urgency;
        Self {
            kernel,
            type_kernel,
            rows: (0..chain.len()).map(|u| chain.row(u)).collect(),
        }
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.type_kernel.apply(&self.rows, self.kernel, v, out);
    }

    pub fn reward(&self) -> &[f64] {
        self.type_kernel.reward()
    }
}

/// Fixed-point iteration `V <- R + alpha P V` until the sup-norm change is
/// at most `v_tol`.
pub fn discounted_iteration(
    reward: &[f64],
    apply: impl Fn(&[f64], &mut [f64]),
    alpha: f64,
    params: &SolverParams,
    warm: Option<&[f64]>,
    keep_history: bool,
) -> Evaluation {
    let mut v = warm.map_or_else(|| reward.to_vec(), <[f64]>::to_vec);
    let mut pv = vec![0.0; v.len()];
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;
    if alpha == 0.0 {
        return Evaluation {
            value: TypeValue::Discounted {
                values: reward.to_vec(),
            },
            sweeps: 0,
            residual: 0.0,
            converged: true,
            history,
        };
    }
    while sweeps < params.max_value_sweeps {
        apply(&v, &mut pv);
        residual = 0.0;
        for ((x, r), p) in v.iter_mut().zip(reward).zip(&pv) {
            let next = r + alpha * p;
            residual = f64::max(residual, (next - *x).abs());
            *x = next;
        }
        sweeps += 1;
        if keep_history {
            history.push(residual);
        }
        if residual <= params.v_tol {
            break;
        }
    }
    Evaluation {
        value: TypeValue::Discounted { values: v },
        sweeps,
        converged: residual <= params.v_tol,
        residual,
        history,
    }
}

/// Relaxed relative value iteration with the anchor at index 0 (for karma
/// games, the first urgency state with zero karma).
pub fn relative_iteration(
    reward: &[f64],
    apply: impl Fn(&[f64], &mut [f64]),
    params: &SolverParams,
    warm: Option<&[f64]>,
    keep_history: bool,
) -> Evaluation {
    let n = reward.len();
    let theta = params.rvi_relaxation;
    let mut y = warm.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut py = vec![0.0; n];
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    let mut gain = 0.0;
    let mut sweeps = 0;
    while sweeps < params.max_value_sweeps {
        apply(&y, &mut py);
        gain = reward[0] + py[0];
        residual = 0.0;
        for i in 0..n {
            let target = reward[i] + py[i] - gain;
            residual = f64::max(residual, (target - y[i]).abs());
            y[i] += theta * (target - y[i]);
        }
        y[0] = 0.0;
        sweeps += 1;
        if keep_history {
            history.push(residual);
        }
        if residual <= params.v_tol {
            break;
        }
    }
    Evaluation {
        value: TypeValue::AverageReward { gain, relative: y },
        sweeps,
        converged: residual <= params.v_tol,
        residual,
        history,
    }
}

/// Exact solution of `V = R + alpha P V` for a dense row-major `P`.
/// Returns `None` when the linear system is singular.
pub(crate) fn discounted_direct(reward: &[f64], p: &[f64], alpha: f64) -> Option<Evaluation> {
    let n = reward.len();
    let mut a: Vec<f64> = p.iter().map(|x| -alpha * x).collect();
    for i in 0..n {
        a[i * n + i] += 1.0;
    }
    let values = solve_dense(a, reward.to_vec())?;
    let residual = bellman_residual(reward, p, &values, alpha, 0.0);
    Some(Evaluation {
        value: TypeValue::Discounted { values },
        sweeps: 0,
        residual,
        converged: residual.is_finite(),
        history: Vec::new(),
    })
}

/// Exact solution of `h + g = R + P h` with `h[0] = 0` for a dense
/// row-major `P`. Fails on multichain policies, where the gain is not
/// constant.
pub(crate) fn relative_direct(reward: &[f64], p: &[f64]) -> Option<Evaluation> {
    let n = reward.len();
    // Column 0 carries the gain in place of the anchored h[0].
    let mut a: Vec<f64> = p.iter().map(|x| -x).collect();
    for i in 0..n {
        a[i * n + i] += 1.0;
        a[i * n] = 1.0;
    }
    let mut relative = solve_dense(a, reward.to_vec())?;
    let gain = relative[0];
    relative[0] = 0.0;
    let residual = bellman_residual(reward, p, &relative, 1.0, gain);
    Some(Evaluation {
        value: TypeValue::AverageReward { gain, relative },
        sweeps: 0,
        residual,
        converged: residual.is_finite(),
        history: Vec::new(),
    })
}

fn bellman_residual(reward: &[f64], p: &[f64], v: &[f64], alpha: f64, gain: f64) -> f64 {
    let n = reward.len();
    (0..n)
        .map(|i| {
            let pv: f64 = p[i * n..(i + 1) * n]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum();
            (reward[i] + alpha * pv - gain - v[i]).abs()
        })
        .fold(0.0, f64::max)
}

/// Discounted value of `type_index`'s own policy under `state`.
pub fn evaluate_value(
    game: &Game,
    state: &SocialState,
    type_index: usize,
    params: &SolverParams,
) -> Result<Evaluation> {
    let alpha = game.agent_type(type_index).discount;
    if alpha >= 1.0 {
        return Err(KarmaError::AverageRewardRequired(alpha));
    }
    let kernel = MarketKernel::new(game, state);
    let tk = TypeKernel::new(game, &kernel, state, type_index);
    let op = PolicyOperator::new(game, &kernel, &tk, type_index);
    Ok(discounted_iteration(
        op.reward(),
        |v, out| op.apply(v, out),
        alpha,
        params,
        None,
        true,
    ))
}

/// Average reward and anchored relative values of `type_index`'s own policy.
pub fn relative_value(
    game: &Game,
    state: &SocialState,
    type_index: usize,
    params: &SolverParams,
) -> Result<Evaluation> {
    let alpha = game.agent_type(type_index).discount;
    if alpha < 1.0 {
        return Err(KarmaError::DiscountedRequired(alpha));
    }
    let kernel = MarketKernel::new(game, state);
    let tk = TypeKernel::new(game, &kernel, state, type_index);
    let op = PolicyOperator::new(game, &kernel, &tk, type_index);
    Ok(relative_iteration(
        op.reward(),
        |v, out| op.apply(v, out),
        params,
        None,
        true,
    ))
}
