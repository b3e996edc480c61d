#![allow(dead_code)]

pub mod oracle;

use karma_core::model::{
    AgentType, Game, MechanismConfig, PaymentRule, SocialState, Tax, UrgencyChain,
};
use rand::Rng;

/// Two-level urgency chain `(1, 10)` with the given transition rows.
pub fn two_level(p_up: f64, p_stay_high: f64) -> UrgencyChain {
    UrgencyChain::new(
        vec![1.0, 10.0],
        vec![vec![1.0 - p_up, p_up], vec![1.0 - p_stay_high, p_stay_high]],
    )
    .unwrap()
}

pub fn single_type(rule: PaymentRule, k_bar: usize, k_max: usize, alpha: f64) -> Game {
    Game::new(
        vec![AgentType::new(two_level(0.2, 0.4), alpha, 1.0)],
        MechanismConfig::new(rule, k_bar).with_k_max(k_max),
    )
    .unwrap()
}

pub fn random_chain<R: Rng>(rng: &mut R, n_u: usize) -> UrgencyChain {
    let values = (0..n_u)
        .map(|u| (u + 1) as f64 * rng.gen_range(0.5..3.0))
        .collect();
    let rows = (0..n_u).map(|_| normalized(rng, n_u)).collect();
    UrgencyChain::new(values, rows).unwrap()
}

fn normalized<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // strictly positive entries keep the chain irreducible
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Random game with one or two types and an optional tax.
pub fn random_game<R: Rng>(rng: &mut R, rule: PaymentRule, k_bar: usize, k_max: usize) -> Game {
    let n_types = rng.gen_range(1..=2);
    let share = if n_types == 1 {
        1.0
    } else {
        rng.gen_range(0.2..0.8)
    };
    let shares = if n_types == 1 {
        vec![1.0]
    } else {
        vec![share, 1.0 - share]
    };
    let types = shares
        .into_iter()
        .map(|s| {
            let n_u = rng.gen_range(2..=3);
            AgentType::new(random_chain(rng, n_u), rng.gen_range(0.0..0.99), s)
        })
        .collect();
    let mut mechanism = MechanismConfig::new(rule, k_bar).with_k_max(k_max);
    if rng.gen_bool(0.5) {
        // keep h[k] <= k on the whole grid
        let exponent = rng.gen_range(1.0..2.0);
        let cap = (k_max as f64).powf(1.0 - exponent);
        mechanism = mechanism.with_tax(Tax {
            coefficient: rng.gen_range(0.0..cap),
            exponent,
        });
    }
    Game::new(types, mechanism).unwrap()
}

/// Random distribution supported on karma `0..=support` and random feasible
/// policy. Rows are normalized so they sum to 1 to rounding.
pub fn random_state<R: Rng>(rng: &mut R, game: &Game, support: usize) -> SocialState {
    let levels = game.levels();
    let mut d = Vec::new();
    let mut pi = Vec::new();
    for t in game.types() {
        let n_u = t.urgency.len();
        let mut dt = vec![0.0; n_u * levels];
        for u in 0..n_u {
            for k in 0..=support.min(levels - 1) {
                if rng.gen_bool(0.7) {
                    dt[u * levels + k] = rng.gen_range(0.0..1.0);
                }
            }
        }
        if dt.iter().all(|x| *x == 0.0) {
            dt[0] = 1.0;
        }
        let s: f64 = dt.iter().sum();
        dt.iter_mut().for_each(|x| *x *= t.share / s);
        let mut pt = vec![0.0; n_u * levels * levels];
        for i in 0..n_u * levels {
            let k = i % levels;
            let row = &mut pt[i * levels..i * levels + k + 1];
            for p in row.iter_mut() {
                if rng.gen_bool(0.6) {
                    *p = rng.gen_range(0.0..1.0);
                }
            }
            if row.iter().all(|x| *x == 0.0) {
                row[rng.gen_range(0..=k)] = 1.0;
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        d.push(dt);
        pi.push(pt);
    }
    SocialState::new(game, d, pi).unwrap()
}
