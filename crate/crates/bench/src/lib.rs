//! Fixtures shared by the benchmarks under `benches/`.

use karma_core::scenario::preset;
use karma_core::solver::evolution_step;
use karma_core::{Game, SocialState, SolverParams};

/// The three-state urgency scenario: one type, PBS, `k_bar = 10`.
pub fn case_study() -> Game {
    preset("case_study_5_2")
        .expect("bundled preset")
        .game()
        .expect("valid preset")
}

/// The two-type scenario with discount factors 0.7 and 0.99.
pub fn hetero() -> Game {
    preset("hetero_alpha")
        .expect("bundled preset")
        .game()
        .expect("valid preset")
}

/// State after `steps` iterations of the dynamics from the default start,
/// so the policy is no longer uniform.
pub fn warmed(game: &Game, steps: usize) -> SocialState {
    let params = SolverParams::default();
    let mut state = SocialState::initial(game);
    for _ in 0..steps {
        state = evolution_step(game, &state, &params)
            .expect("valid state")
            .0;
    }
    state
}
