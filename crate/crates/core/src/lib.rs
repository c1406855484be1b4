//! Hierarchical "games-in-games" control of regime-switching diffusions.
//!
//! The inner layer is a Markov-jump linear-quadratic game solved through
//! coupled Riccati flows ([`mjls`]); the outer layer picks regime switching
//! rates as the saddle of a per-regime matrix game ([`outer`]); [`hierarchy`]
//! runs both in one backward sweep. [`asgame`], [`sim`] and [`calib`] apply
//! the machinery to an adversarial Avellaneda–Stoikov market maker.
//!
//! Time is measured in years throughout unless a name says otherwise.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod asgame;
pub mod calib;
pub mod error;
pub mod game;
pub mod hierarchy;
pub mod mjls;
pub mod numkit;
pub mod outer;
pub mod rates;
pub mod sim;

pub use error::{Error, Result};

/// Version tag written into every CSV and JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;
