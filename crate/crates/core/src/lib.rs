//! Locally Gaussian discretisation and parameter estimation for highly
//! degenerate diffusions.
//!
//! The numerical core is generic over [`Real`] (`f32`, `f64`); the aliases
//! below fix the scalar for the common case.

pub mod bias;
pub mod complete;
pub mod density;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod partial;
pub mod scalar;
pub mod stochastics;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mat64 = linalg::Mat<f64>;
pub type ParamVector64 = model::ParamVector<f64>;
pub type Preset64 = model::Preset<f64>;
pub type PathSample64 = stochastics::PathSample<f64>;
pub type ObservationSet64 = stochastics::ObservationSet<f64>;
pub type BlockCovariance64 = density::BlockCovariance<f64>;
pub type ContrastResult64 = complete::ContrastResult<f64>;
pub type PrecisionMatrix64 = complete::PrecisionMatrix<f64>;
pub type FilterState64 = partial::FilterState<f64>;

pub type Mat32 = linalg::Mat<f32>;
pub type ParamVector32 = model::ParamVector<f32>;
pub type Preset32 = model::Preset<f32>;
pub type PathSample32 = stochastics::PathSample<f32>;
pub type ObservationSet32 = stochastics::ObservationSet<f32>;

/// Exact rational scalar used for the closed-form case-study constants.
pub type Rational = num_rational::Rational64;
