//! Sparsity-based space-time adaptive processing for airborne radar with
//! joint estimation of array gain/phase errors.
//!
//! * [`scene`] simulates clutter, targets, array errors and noise.
//! * [`dictionary`] holds the spatio-Doppler grid and steering dictionary.
//! * [`solver`] recovers sparse profiles and inverse array errors.
//! * [`detector`] runs the median CFAR test on recovered profiles.
//! * [`harness`] drives seeded Monte Carlo experiments.

pub mod detector;
pub mod dictionary;
pub mod error;
pub mod harness;
pub mod scene;
pub mod selftest;
pub mod serde_ext;
pub mod solver;

pub use num_complex::Complex64 as C64;

pub use error::{Result, StapError};
