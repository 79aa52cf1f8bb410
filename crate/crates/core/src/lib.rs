//! Status-quo aware policy-gradient learners for iterated social dilemmas.
//!
//! The crate bundles everything needed to train and evaluate the learners:
//!
//! - [`nn`]: a minimal network engine (dense and convolution layers, Adam/SGD).
//! - [`matrix_games`]: iterated prisoner's dilemma, matching pennies and stag hunt.
//! - [`coin_game`]: the 3x3 two-agent Coin Game.
//! - [`learners`]: selfish and status-quo actor-critic learners plus fixed opponents.
//! - [`gamedistill`]: skill extraction from random play into cooperation/defection oracles.
//! - [`harness`]: configuration, orchestration, metrics and persistence.

pub mod coin_game;
pub mod error;
pub mod gamedistill;
pub mod harness;
pub mod learners;
pub mod matrix_games;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
