//! Reachability-based collision detection for two-vehicle highway
//! interactions.
//!
//! * [`brs`]: offline backward reachable set and its cached lookup table.
//! * [`frs`]: stochastic forward reachable set driven by acceleration forecasts.
//! * [`framework`]: the gate / propagate / alert pipeline over a trace.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief;
pub mod brs;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod framework;
pub mod frs;
pub mod grid;
pub mod normal;
pub mod predictor;
pub mod scenario;

pub use error::{Error, Result};
