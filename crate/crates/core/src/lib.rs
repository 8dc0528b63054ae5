//! Atlas-to-DSA territory registration toolkit.
//!
//! Projects selected territories of a labeled 3D arterial atlas through a
//! cone-beam C-arm geometry, extracts a perfusion mask from a DSA frame
//! sequence, registers the projection onto the mask (mutual-information
//! affine stage followed by a cubic B-spline free-form stage), and scores
//! and renders the per-territory overlay.
//!
//! Numeric kernels are generic over [`Real`] (`f32` or `f64`); the aliases
//! below pin the `f64` instantiation used by the pipeline.

// Negated comparisons are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atlas;
pub mod error;
pub mod imgcore;
pub mod metrics;
pub mod overlay;
pub mod phantom;
pub mod io_util;
pub mod preproc;
pub mod projector;
pub mod register;
pub mod scalar;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use scalar::Real;

pub type GrayImage64 = imgcore::GrayImage<f64>;
pub type GrayImage32 = imgcore::GrayImage<f32>;
pub type FrameSequence64 = imgcore::FrameSequence<f64>;
pub type Projection64 = projector::Projection<f64>;
