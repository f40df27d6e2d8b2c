//! Degradation-aware EV battery pack simulator for cyberattack impact studies.
//!
//! The electrochemical core ([`cell`], [`pack`]) is generic over the scalar
//! type; scenario-level code runs in f64.

// `!(x > 0)` is the NaN-rejecting form used for validation throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod cell;
pub mod data;
pub mod defaults;
pub mod duty;
pub mod manifest;
pub mod num;
pub mod ocv;
pub mod pack;
pub mod runner;
pub mod scenario;

pub use cell::{CellError, Regime};
pub use num::Real;

pub type CellParams = cell::CellParams<f64>;
pub type CellState = cell::CellState<f64>;
pub type StepResult = cell::StepResult<f64>;
pub type PackTopology = pack::PackTopology<f64>;
pub type BmsConfig = pack::BmsConfig<f64>;
