//! Edge-transformer force field with a reverse-mode tape, an MD engine and
//! physics-audit diagnostics.
//!
//! Numeric code is generic over [`Real`] (f32 or f64); the aliases below fix
//! the precision for callers that do not care.

pub mod autodiff;
pub mod config;
pub mod dataio;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod md;
pub mod model;
pub mod params;
pub mod scalar;
pub mod system;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::{Precision, Real};

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;

pub type Model64 = model::Model<f64>;
pub type Model32 = model::Model<f32>;
