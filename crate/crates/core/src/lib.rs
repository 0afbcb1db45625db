//! Stability functions of Kähler quotients.
//!
//! The library computes the function ψ that measures how far a stable point
//! upstairs sits from the zero level of the shifted moment map, for several
//! families of quotients: toric varieties cut out by integer weight data,
//! Grassmannians, flag-type matrix chains, and polygon spaces. On top of the
//! pointwise evaluators it carries the machinery needed to check the
//! semiclassical statements that make ψ useful: section norms upstairs and
//! downstairs, Laplace-type orbit integrals, moment growth, and density of
//! states.
//!
//! The crate is `no_std` + `alloc`; everything that touches files or threads
//! lives in the companion CLI crate.

#![cfg_attr(not(test), no_std)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod asymptotics;
pub mod conventions;
pub mod error;
pub mod fmath;
pub mod geometry;
pub mod kempf_ness;
pub mod matrix_varieties;
pub mod rng;
pub mod sections;
pub mod stability;

pub use error::{Error, Result};
