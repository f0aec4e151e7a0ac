//! Rotated multi-fidelity Gaussian process regression with sufficient
//! dimension reduction.

pub mod active;
pub mod benchmarks;
pub mod data;
pub mod error;
pub mod gp;
pub mod gpdr;
pub mod linalg;
pub mod multifidelity;
pub mod optimize;
pub mod pipeline;
pub mod scalar;
pub mod sdr;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset = data::Dataset<f64>;
pub type NestedSplit = data::NestedSplit<f64>;
pub type GpModel = gp::GpModel<f64>;
pub type NargpModel = multifidelity::NargpModel<f64>;
pub type SdrResult = sdr::SdrResult<f64>;
pub type RmfgpResult = pipeline::RmfgpResult<f64>;
pub type FinalSurrogate = pipeline::FinalSurrogate<f64>;
