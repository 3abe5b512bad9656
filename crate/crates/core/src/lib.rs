//! Event-driven Monte Carlo for the Lambda-Fleming-Viot model with
//! fluctuating selection, its lookdown representations, and the limiting
//! Feller / superBrownian processes.
//!
//! The crate is organised by layer:
//!
//! * [`point_process`] and [`environment`] are the random primitives.
//! * [`lookdown`] and [`projected`] are the non-spatial prelimit models,
//!   [`limits`] the particle systems for the limiting generators.
//! * [`spatial`] holds the torus simulators (SLFVFS, its lookdown, the
//!   branching random walk) together with the heat-flow and
//!   quadratic-variation oracles.
//! * [`scaling`] maps `N` to model parameters and checks limit conditions.
//! * [`stats`] and [`harness`] turn ensembles of runs into reports.

pub mod acceptance;
pub mod environment;
pub mod error;
pub mod harness;
pub mod limits;
pub mod lookdown;
pub mod point_process;
pub mod projected;
pub mod rng;
pub mod scaling;
pub mod spatial;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
pub use trajectory::{RunStatus, Trajectory};
