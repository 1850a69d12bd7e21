//! Kernel maximum moment restriction (KMMR) estimation for instrumental
//! variable regression, with data-driven selection of the instrument space.
//!
//! The pipeline for one dataset and one candidate kernel is:
//!
//! 1. fit θ̂ by minimizing the empirical KMMR risk ([`mmr`]);
//! 2. test whether the Hessian-like matrix F̂ has full rank ([`itc`]);
//! 3. score the candidate with the kernel effective information criterion ([`keic`]).
//!
//! [`selection`] combines the two criteria over a candidate grid and
//! [`experiment`] drives the simulation studies behind the `kmmr` binary.

pub mod config;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod io;
pub mod itc;
pub mod keic;
pub mod kernels;
pub mod mmr;
pub mod models;
pub mod numerics;
pub mod selection;

pub use error::{Error, Result};
