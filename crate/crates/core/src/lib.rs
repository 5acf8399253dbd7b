//! Joint image deblurring + super-resolution at desk scale.
//!
//! The crate is a self-contained stack: a rank-4 tensor engine with
//! reverse-mode autodiff ([`graph`]), wavelet/Fourier transforms
//! ([`spectral`]), the network blocks (PAKB, MDAB, RCAB, AFF; [`blocks`]),
//! the assembled dual-branch model ([`model`]), the training objective
//! including the adaptive Wiener loss ([`losses`]), a degradation
//! simulator ([`degradation`]), quality metrics ([`metrics`]), and a
//! training loop with Adam + MultiStepLR ([`train`]).
//!
//! Everything numeric is generic over [`scalar::Scalar`]: `f32` is the
//! training dtype, `f64` drives the finite-difference gradient checks.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod degradation;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod shape;
pub mod spectral;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use shape::Shape;

/// Training-precision aliases.
pub type Tensor32 = tensor::Tensor<f32>;
pub type Graph32 = graph::Graph<f32>;
pub type Model32 = model::AkmdModel<f32>;

/// Gradient-check-precision aliases.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph64 = graph::Graph<f64>;
pub type Model64 = model::AkmdModel<f64>;
