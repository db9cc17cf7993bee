//! Multi-agent coverage control through optimal transport.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! machinery: rasterized densities on rectangular domains, truncated-Gaussian
//! kernel mixtures, Voronoi and capacity-constrained partitions, discrete and
//! semi-discrete transport solvers, the coverage objectives built on top of
//! them, and the descent schemes that move agents (or whole grid measures)
//! toward a target density.
//!
//! IO, configuration, and the command line live in the `otcover` crate.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod descent;
pub mod domain;
mod error;
pub mod geom;
pub mod kernels;
pub mod objectives;
pub mod partition;
pub mod transport;

pub use error::{Error, Result};
pub use geom::Point2;
