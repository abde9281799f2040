//! Approximate constant mean curvature hypersurfaces in `S^{n+1}` built by
//! gluing hyperspheres, catenoidal necks and Clifford tori.
//!
//! The crate is organised bottom up:
//!
//! * [`ambient`] rotations, stereographic charts and conformal geometry.
//! * [`blocks`] exact geometry of the three building blocks.
//! * [`matching`] scale and translation parameters that fit the blocks together.
//! * [`assembler`] sampled approximate solutions, weights and mesh export.
//! * [`verify`] mean curvature error, flux, balancing and integrity checks.
//! * [`cli`] configuration parsing and the command line driver.

pub mod ambient;
pub mod assembler;
pub mod blocks;
pub mod cli;
pub mod matching;
pub mod quadrature;
pub mod verify;

mod error;

pub use error::{Error, Result};
