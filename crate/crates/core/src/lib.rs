//! Numerical laboratory for Zorich maps: the quasiregular analogue of the
//! exponential in three dimensions.
//!
//! The crate is `no_std` (with `alloc`) so the dynamics can run anywhere;
//! file formats, threading and the command line live in the `zorich` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dimension;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod hairs;
pub mod linalg;
pub mod map;
pub mod math;
pub mod sampling;
pub mod symbolic;

pub use error::{Error, Result};
pub use linalg::{Mat3, Vec3};
pub use map::{CellIndex, MapConfig};
