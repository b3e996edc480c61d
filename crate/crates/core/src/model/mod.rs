//! Domain types and single-round mathematics of the karma game.

mod interaction;
mod kernel;
mod mechanism;
mod social;
mod urgency;

pub use interaction::{
    bid_distribution, immediate_reward, mean_surplus_pbs, win_probability, BidDistribution,
    Outcome, OutcomeKernel,
};
pub(crate) use kernel::{expected_over_urgency, residual_with_kernel};
pub use kernel::{
    karma_preservation_residual, policy_reward, policy_transition, state_transition, KarmaLaw,
    MarketKernel, SparseLaw, TypeKernel,
};
pub use mechanism::{
    fractional_split, validate_types, AgentType, Game, MechanismConfig, PaymentRule, Tax,
};
pub use social::SocialState;
pub use urgency::UrgencyChain;
