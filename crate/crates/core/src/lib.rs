//! Active inverse Stackelberg games with a boundedly rational follower.
//!
//! A leader repeatedly plays against a quantal-response follower whose
//! quadratic cost depends on an unknown parameter θ. After every round the
//! leader re-estimates θ by maximum likelihood and picks its next action
//! either to maximize Fisher information ([`active::run_algorithm1`]) or to
//! trade expected cost against information ([`active::run_algorithm2`]).

pub mod error;
pub mod estimation;
pub mod fisher;
pub mod game;
pub mod linalg;
pub mod search;
pub mod active;
pub mod harness;

pub use error::{Error, Result};
pub use game::{Dataset, FollowerDistribution, GameConfig, InteractionRecord, LeaderBox, ParamVector};
