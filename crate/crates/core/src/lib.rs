//! Numerical laboratory for the scalar potential form of the generalized
//! Kähler-Ricci flow on flat complex tori.

// comparisons are written so that NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod class;
pub mod cli;
pub mod config;
pub mod error;
pub mod expr;
pub mod flow;
pub mod grid;
pub mod herm;
pub mod svg;
pub mod verify;

pub use class::CohomologyClass;
pub use error::{Error, Result};
pub use flow::{Gauge, Scenario, Trajectory};
pub use grid::{Backend, PeriodicGrid, RealAxis, ScalarField};
