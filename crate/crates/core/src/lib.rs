//! Intersection micro-simulator with a two-level controller: FCFS lane
//! reservation picks which lanes cross together, a deep Q-network picks how
//! many vehicles cross as one platoon.

pub mod baselines;
pub mod control;
pub mod drl;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod platooning;
pub mod reservation;
pub mod seeding;
pub mod simcore;

pub use error::{Error, Result};
