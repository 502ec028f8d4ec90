//! Simulation and verification toolkit for central limit theorems of
//! stationary random fields under projective (Maxwell-Woodroofe type)
//! conditions.
//!
//! * [`lattice`]: indices, windows, prefix sums `S_n`.
//! * [`innovations`], [`model`], [`simulate`]: linear and Volterra fields
//!   driven by iid or column-martingale-difference innovations.
//! * [`conditions`]: closed-form projective norms and condition series.
//! * [`mart`]: the blocking / martingale-difference construction and its
//!   Monte Carlo diagnostics.
//! * [`oracle`]: brute-force conditional expectations over Rademacher
//!   configurations.
//! * [`experiments`]: variance scans, CLT tests and implied-constant scans.

pub mod conditions;
pub mod experiments;
pub mod innovations;
pub mod lattice;
pub mod mart;
pub mod model;
pub mod oracle;
pub mod simulate;
pub mod stats;

pub use innovations::{gen_innovations, gen_innovations_at, Distribution, InnovationArray, InnovationSpec, Structure};
pub use lattice::{prefix_sums, rect_sum, LatticeError, LatticeIndex, PrefixArray, Window};
pub use model::{AlternatingFamily, CoeffArray, CoeffFamily, FieldModel, ModelDescriptor, VolterraCoeffs};
pub use simulate::{simulate, simulate_linear, simulate_linear_fft, simulate_volterra, FieldWindow};

/// Errors from model construction and simulation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FieldError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("unsupported innovation structure: {0}")]
    UnsupportedStructure(String),
    #[error("insufficient pad on axis {axis}: innovations {from}..={to} are not materialized")]
    Pad { axis: usize, from: i64, to: i64 },
    #[error("lattice coordinate {0} outside the generator range [-32768, 32767]")]
    CoordinateRange(i64),
}

/// Crate-level error.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Conditions(#[from] conditions::ConditionsError),
    #[error(transparent)]
    Oracle(#[from] oracle::OracleError),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
