//! Model-based bi-partition clustering of multivariate periodic time series.
//!
//! Each subject's record is cropped to whole cycles, projected on Fourier
//! bases (the signal and its squared residuals), and the two coefficient sets
//! are clustered jointly: one partition for the mean cyclic pattern, one for
//! the dispersion around it, with dependent mixing proportions and
//! per-partition selection of the relevant dimensions.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod basis;
pub mod em;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod mixture;
pub mod scalar;
pub mod seed;
pub mod signal;
pub mod simulate;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Series = signal::MultivariateSeries<f64>;
pub type Aligned = signal::AlignedSeries<f64>;
pub type Coefficients = basis::CoefficientPair<f64>;
pub type Parameters = mixture::MixtureParameters<f64>;
pub type Fuzzy = mixture::FuzzyPartition<f64>;
pub type Fit = em::FitResult<f64>;
