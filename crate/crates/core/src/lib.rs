//! Reservoir computing for chaotic time-series forecasting: data generation,
//! reservoir construction, ridge-trained readouts, forecast metrics, Lyapunov
//! spectra, Bayesian hyperparameter search and an experiment harness.

// Guards like `!(x > 0.0)` are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayesopt;
pub mod bench;
pub mod datapipe;
pub mod dynamics;
pub mod error;
pub mod lyapunov;
pub mod rcmodel;
pub mod reservoir;
pub mod stats;
pub mod task;

pub use error::{Error, Result};
pub use reservoir::{HyperParams, Reservoir, Topology};
