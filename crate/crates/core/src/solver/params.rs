use serde::{Deserialize, Serialize};

use crate::error::{KarmaError, Result};

/// When policy evaluation and the distribution target use dense linear
/// solves instead of fixed-point sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DirectSolve {
    /// Only for average-reward types, whose chains can mix too slowly for
    /// sweeps to be practical.
    #[default]
    Auto,
    Always,
    Never,
}

impl DirectSolve {
    pub fn applies(self, average_reward: bool) -> bool {
        match self {
            DirectSolve::Auto => average_reward,
            DirectSolve::Always => true,
            DirectSolve::Never => false,
        }
    }
}

/// Step sizes and tolerances of the equilibrium search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    /// Euler step of the evolutionary dynamics.
    pub dt: f64,
    /// Policy update rate relative to the distribution dynamics.
    pub eta: f64,
    /// Rationality of the perturbed best response (softmax inverse temperature).
    pub lambda: f64,
    /// Bellman residual at which policy evaluation stops.
    pub v_tol: f64,
    /// Stationarity and best-response residual at which the search stops.
    pub fp_tol: f64,
    pub max_iters: usize,
    /// Cap on value-iteration sweeps per policy evaluation.
    pub max_value_sweeps: usize,
    /// Relative tolerance for ties in best-response sets.
    pub q_tie_tol: f64,
    /// Weight of the new iterate in relative value iteration; values below 1
    /// make the iteration converge on periodic chains as well.
    pub rvi_relaxation: f64,
    /// Factor applied to `eta` when the residuals stall over `stall_window`
    /// iterations. `1.0` keeps the policy rate fixed.
    pub eta_decay: f64,
    pub stall_window: usize,
    /// Floor for the decayed policy rate.
    pub eta_min: f64,
    /// Policy evaluation stops at `max(v_tol, value_tol_ratio * r)`, where
    /// `r` is the previous iteration's larger residual. Set to 0 to always
    /// evaluate at `v_tol`.
    pub value_tol_ratio: f64,
    /// With a direct solve, a type's distribution relaxes toward the
    /// stationary law of its current chain rather than toward `d P`; both
    /// have the same rest points.
    pub direct_solve: DirectSolve,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            dt: 0.2,
            eta: 0.5,
            lambda: 1000.0,
            v_tol: 1e-10,
            fp_tol: 1e-6,
            max_iters: 100_000,
            max_value_sweeps: 200_000,
            q_tie_tol: 1e-10,
            rvi_relaxation: 0.9,
            eta_decay: 0.5,
            stall_window: 200,
            eta_min: 0.01,
            value_tol_ratio: 1e-7,
            direct_solve: DirectSolve::Auto,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KarmaError::InvalidParams(m));
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return bad(format!("dt = {} outside (0, 1]", self.dt));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta = {} must be positive", self.eta));
        }
        if self.dt * self.eta > 1.0 {
            return bad(format!(
                "dt * eta = {} exceeds 1; the policy update would leave the simplex",
                self.dt * self.eta
            ));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda = {} must be non-negative", self.lambda));
        }
        if !(self.v_tol > 0.0 && self.fp_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.max_iters == 0 || self.max_value_sweeps == 0 {
            return bad("iteration caps must be positive".into());
        }
        if !(self.rvi_relaxation > 0.0 && self.rvi_relaxation <= 1.0) {
            return bad("rvi_relaxation must lie in (0, 1]".into());
        }
        if !(self.eta_decay > 0.0 && self.eta_decay <= 1.0) {
            return bad(format!("eta_decay = {} outside (0, 1]", self.eta_decay));
        }
        if self.stall_window == 0 {
            return bad("stall_window must be positive".into());
        }
        if !(self.eta_min > 0.0) {
            return bad(format!("eta_min = {} must be positive", self.eta_min));
        }
        if !(self.value_tol_ratio >= 0.0 && self.value_tol_ratio.is_finite()) {
            return bad("value_tol_ratio must be finite and non-negative".into());
        }
        Ok(())
    }
}
