//! Simulation and verification toolkit for lattice metapopulation models.
//!
//! Four local-population dynamics live on a finite window of the hypercubic
//! lattice: a capacity model, an Allee-effect model, a mass-migration model
//! and a self-regulating model without hard capacity. The crate provides
//!
//! - [`lattice`]: finite windows, boundary semantics and configurations,
//! - [`models`]: exact transition-rate tables and single-site dominators,
//! - [`engine`]: exact Gillespie simulation and uniformized coupled chains,
//! - [`order`]: exhaustive checking of the stochastic-order inequalities,
//! - [`analysis`]: survival, bisection, occupancy and ruin estimators,
//! - [`percolation`]: space-time block estimates and oriented percolation.

pub mod analysis;
pub mod engine;
mod error;
pub mod lattice;
pub mod models;
pub mod order;
pub mod percolation;
pub mod stats;

pub use error::{Error, Result};
