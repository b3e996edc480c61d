//! Independent reference computations: exhaustive enumeration of one round
//! on a tiny instance, and a toy average-reward MDP checked by simulation.

use super::random_state;
use karma_core::model::{
    policy_transition, state_transition, AgentType, Game, MarketKernel, MechanismConfig,
    PaymentRule, SocialState, Tax, UrgencyChain,
};
use karma_core::solver::{relative_iteration, SolverParams, TypeValue};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K_MAX: usize = 3;
const L: usize = K_MAX + 1;

fn tiny_game(rule: PaymentRule, tax: Option<Tax>) -> Game {
    let chain = UrgencyChain::new(vec![1.0, 6.0], vec![vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap();
    let mut m = MechanismConfig::new(rule, 1).with_k_max(K_MAX);
    m.tax = tax;
    Game::new(vec![AgentType::new(chain, 0.8, 1.0)], m).unwrap()
}

/// Adds `x` (possibly fractional) to `k` with floor/ceil rounding, clamped.
fn add_rounded(law: &mut [f64; L], k: usize, x: f64, weight: f64) {
    let lo = x.floor();
    let p_hi = x - lo;
    let lo = lo as usize;
    law[(k + lo).min(K_MAX)] += weight * (1.0 - p_hi);
    if p_hi > 0.0 {
        law[(k + lo + 1).min(K_MAX)] += weight * p_hi;
    }
}

/// One round for an agent at `(k, b)` by brute force over the opponent's
/// `(u', k', b')` and the tie coin: payments, then PBS redistribution of
/// the mean payment, then tax and redistribution of the mean revenue.
fn enumerate_karma(game: &Game, state: &SocialState, k: usize, b: usize) -> [f64; L] {
    let rule = game.mechanism().payment_rule;
    let d = state.distribution(0);
    // opponent bid law by enumeration
    let mut nu = [0.0; L];
    for u in 0..2 {
        for kk in 0..L {
            for (bb, p) in state.policy_row(0, u, kk).iter().enumerate() {
                nu[bb] += d[u * L + kk] * p;
            }
        }
    }
    // mean payment per agent: each agent pays its bid when it wins
    let win = |mine: usize, theirs: usize| match mine.cmp(&theirs) {
        std::cmp::Ordering::Greater => 1.0,
        std::cmp::Ordering::Equal => 0.5,
        std::cmp::Ordering::Less => 0.0,
    };
    let mut mean_payment = 0.0;
    for (b1, p1) in nu.iter().enumerate() {
        for (b2, p2) in nu.iter().enumerate() {
            mean_payment += p1 * p2 * win(b1, b2) * b1 as f64;
        }
    }

    let mut after_payment = [0.0; L];
    for (b_opp, p) in nu.iter().enumerate() {
        let w_win = p * win(b, b_opp);
        let w_lose = p * (1.0 - win(b, b_opp));
        after_payment[k - b] += w_win;
        match rule {
            PaymentRule::Pbp => after_payment[(k + b_opp).min(K_MAX)] += w_lose,
            PaymentRule::Pbs => after_payment[k] += w_lose,
        }
    }
    let mut after_redistribution = [0.0; L];
    for (m, w) in after_payment.iter().enumerate() {
        match rule {
            PaymentRule::Pbp => after_redistribution[m] += w,
            PaymentRule::Pbs => add_rounded(&mut after_redistribution, m, mean_payment, *w),
        }
    }
    let Some(tax) = game.mechanism().tax else {
        return after_redistribution;
    };

    // the population's post-redistribution law gives the tax revenue
    let mut population = [0.0; L];
    for u in 0..2 {
        for kk in 0..L {
            for (bb, pb) in state.policy_row(0, u, kk).iter().enumerate() {
                let w = d[u * L + kk] * pb;
                if w == 0.0 {
                    continue;
                }
                let mut pay = [0.0; L];
                for (b_opp, p) in nu.iter().enumerate() {
                    pay[kk - bb] += p * win(bb, b_opp);
                    let lose = p * (1.0 - win(bb, b_opp));
                    match rule {
                        PaymentRule::Pbp => pay[(kk + b_opp).min(K_MAX)] += lose,
                        PaymentRule::Pbs => pay[kk] += lose,
                    }
                }
                for (m, x) in pay.iter().enumerate() {
                    match rule {
                        PaymentRule::Pbp => population[m] += w * x,
                        PaymentRule::Pbs => add_rounded(&mut population, m, mean_payment, w * x),
                    }
                }
            }
        }
    }
    let revenue: f64 = population
        .iter()
        .enumerate()
        .map(|(j, p)| p * tax.amount(j))
        .sum();
    let mut out = [0.0; L];
    for (j, w) in after_redistribution.iter().enumerate() {
        let h = tax.amount(j);
        let (lo, p_hi) = (h.floor(), h - h.floor());
        let mut after_tax = [0.0; L];
        after_tax[j - lo as usize] += 1.0 - p_hi;
        if p_hi > 0.0 {
            after_tax[j - lo as usize - 1] += p_hi;
        }
        for (m, x) in after_tax.iter().enumerate() {
            add_rounded(&mut out, m, revenue, w * x);
        }
    }
    out
}

/// Largest absolute difference between the model's state and policy
/// transitions and the enumerated ones, over a random state.
pub fn enumeration_error(rule: PaymentRule, tax: Option<Tax>, seed: u64) -> f64 {
    let game = tiny_game(rule, tax);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = random_state(&mut rng, &game, K_MAX);
    let kernel = MarketKernel::new(&game, &state);
    let chain = &game.agent_type(0).urgency;
    let p = policy_transition(&game, &kernel, &state, 0);
    let mut worst: f64 = 0.0;
    for u in 0..2 {
        for k in 0..L {
            let mut mixed = [0.0; 2 * L];
            for b in 0..=k {
                let karma = enumerate_karma(&game, &state, k, b);
                let rho = state_transition(&game, &kernel, 0, u, k, b).unwrap();
                let pb = state.policy_row(0, u, k)[b];
                for un in 0..2 {
                    for kn in 0..L {
                        let expected = chain.prob(u, un) * karma[kn];
                        worst = worst.max((rho[un * L + kn] - expected).abs());
                        mixed[un * L + kn] += pb * expected;
                    }
                }
            }
            for (j, expected) in mixed.iter().enumerate() {
                worst = worst.max((p[u * L + k][j] - expected).abs());
            }
        }
    }
    worst
}

pub struct RviCheck {
    pub converged: bool,
    pub gain: f64,
    pub anchor: f64,
    /// Largest Bellman residual of the returned gain and relative values.
    pub bellman_residual: f64,
    /// Batch-means estimate of the long-run average reward and its standard error.
    pub simulated: f64,
    pub sigma: f64,
}

/// Random 6-state chain with rewards: relative value iteration against the
/// long-run average of a 10^6-step simulated trajectory.
pub fn rvi_toy(seed: u64) -> RviCheck {
    const N: usize = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p: Vec<Vec<f64>> = (0..N)
        .map(|_| {
            let w: Vec<f64> = (0..N).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let reward: Vec<f64> = (0..N).map(|_| -rng.gen_range(0.0..10.0)).collect();
    let apply = |v: &[f64], out: &mut [f64]| {
        for (o, row) in out.iter_mut().zip(&p) {
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    };
    let params = SolverParams {
        v_tol: 1e-13,
        ..Default::default()
    };
    let eval = relative_iteration(&reward, apply, &params, None, false);
    let TypeValue::AverageReward { gain, relative } = eval.value else {
        panic!("average-reward evaluation expected");
    };
    let mut bellman_residual: f64 = 0.0;
    for i in 0..N {
        let pv: f64 = p[i].iter().zip(&relative).map(|(a, b)| a * b).sum();
        bellman_residual = bellman_residual.max((reward[i] + pv - gain - relative[i]).abs());
    }

    let steps = 1_000_000;
    let batches = 100;
    let mut state = 0;
    let mut means = Vec::with_capacity(batches);
    let mut acc = 0.0;
    for t in 1..=steps {
        acc += reward[state];
        let x: f64 = rng.gen();
        let mut c = 0.0;
        let mut next = N - 1;
        for (j, q) in p[state].iter().enumerate() {
            c += q;
            if x < c {
                next = j;
                break;
            }
        }
        state = next;
        if t % (steps / batches) == 0 {
            means.push(acc / (steps / batches) as f64);
            acc = 0.0;
        }
    }
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    RviCheck {
        converged: eval.converged,
        gain,
        anchor: relative[0],
        bellman_residual,
        simulated: mean,
        sigma: (var / batches as f64).sqrt(),
    }
}
