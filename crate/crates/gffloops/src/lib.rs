//! Gaussian free field interface loops on lattice disks and annuli, and the
//! Brownian hitting / last-passage laws of their extremal distances and
//! conformal radii.

pub mod error;
pub mod experiment;
pub mod geometry;
pub mod interfaces;
pub mod lattice;
pub mod laws;
pub mod quad;
pub mod reference;
pub mod rng;
pub mod selftest;
pub mod stats;
pub mod tables;

pub use error::{Error, Result};
