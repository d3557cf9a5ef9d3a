//! Gaussian-splatting model of X-ray radiographs.
//!
//! Two Gaussian sets are composited per pixel: an isotropic set whose
//! radiosity is a learned linear read-out of a per-Gaussian feature, and a
//! directional set whose read-out is modulated by real spherical harmonics
//! of the viewing direction. Everything here is `no_std` + `alloc`; file
//! formats, timing and the command line live in the `xsplat` crate.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(feature = "std")]
extern crate std;

extern crate alloc;

pub mod drrcast;
pub mod error;
pub mod geometry;
pub mod gsmodel;
pub mod math;
pub mod metrics;
pub mod rads;
pub mod registration;
pub mod sh;
pub mod splat;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
