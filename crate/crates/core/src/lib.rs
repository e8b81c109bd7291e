//! Dyadic cubes, approximations of the identity and smoothness norms on
//! finite quasi-metric measure spaces.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix `f64`.

pub mod difference_norms;
pub mod dyadic;
pub mod error;
pub mod io;
pub mod kernels;
pub mod norms;
pub mod operators;
pub mod scalar;
pub mod space;

pub use error::{Error, Result};
pub use kernels::Flavor;
pub use scalar::Scalar;

pub type Space = space::MetricMeasureSpace<f64>;
pub type Stack = kernels::KernelStack<f64>;
pub type Field = operators::Field<f64>;
pub type Frame<'a> = operators::Frame<'a, f64>;
