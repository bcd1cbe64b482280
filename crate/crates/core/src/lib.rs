//! Spike-and-slab wavelet regression on [0,1]^d.

pub mod design;
pub mod experiment;
pub mod frequentist;
pub mod function_space;
pub mod gram;
pub mod plot;
pub mod posterior;
pub mod scalar;
pub mod seed;
pub mod wavelet;

pub use scalar::Real;

pub type Basis = wavelet::Basis<f64>;
pub type Basis32 = wavelet::Basis<f32>;
pub type CoefficientField = function_space::CoefficientField<f64>;
