//! Phase-connection optimization for unbalanced low-voltage distribution feeders.
//!
//! The crate is organised bottom-up:
//!
//! * [`netmodel`] loads a radial feeder and its demand profiles and builds
//!   immutable per-period [`netmodel::CaseSnapshot`]s in per-unit.
//! * [`powerflow`] is the exact unbalanced three-phase power flow used to
//!   verify every optimized connection plan.
//! * [`formulations`] evaluates a concrete phase assignment under the
//!   fixed-voltage, affine inverse-voltage and lossless branch-flow models.
//! * [`optimizer`] searches over the phases of switchable customers and runs
//!   the fixed-voltage outer iteration and the PV reactive-power extension.
//! * [`experiment`] runs full-day sweeps and builds the comparison reports.

pub mod error;
pub mod experiment;
pub mod formulations;
pub mod netmodel;
pub mod optimizer;
pub mod phasor;
pub mod powerflow;
pub mod synthetic;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use phasor::{Phase, Phasor3};
