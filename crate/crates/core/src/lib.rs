//! Simulation and parameter-estimation toolkit for the driven, dissipative
//! Dicke quantum battery: `N` two-level molecules in a lossy, pulse-pumped
//! optical cavity.
//!
//! The crate is organised bottom-up:
//!
//! * [`units`] and [`model`] hold the unit system, physical parameters, the
//!   pump envelope and calibration helpers.
//! * [`ode`] is an adaptive Dormand–Prince 5(4) integrator with dense output.
//! * [`cumulant`] evolves the second-order cumulant (and mean-field) moment
//!   equations and produces energy traces.
//! * [`oracle`] integrates the full Lindblad master equation for up to three
//!   molecules and is the ground truth for [`cumulant`].
//! * [`observables`] turns traces into charging metrics, classifies operating
//!   regimes and runs parameter sweeps.
//! * [`spectrum`] evaluates the closed-form polariton absorption spectrum.
//! * [`fit`] implements the global reduced-chi-squared grid fit against
//!   transient-reflectivity data.
//! * [`validation`] holds the self-checks run by `oracle-check`,
//!   `reproduce-paper` and the acceptance tests.
//! * [`config`] and [`io`] are the file formats used by the `qbattery` binary.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cumulant;
pub mod error;
pub mod fit;
pub mod io;
pub mod model;
pub mod observables;
pub mod ode;
pub mod oracle;
pub mod spectrum;
pub mod units;
pub mod validation;

pub use error::{Error, Result};
pub use model::{ModelParams, PulseParams};
