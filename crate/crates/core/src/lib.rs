//! Equilibrium price process of a contingent claim quoted by an
//! exponential-utility market maker who absorbs a large investor's simple
//! demand, computed exactly on binary random-walk lattices.

pub mod analytic;
pub mod cli;
pub mod contract;
pub mod error;
pub mod expansion;
pub mod lattice;
pub mod pricing;
pub mod verify;

pub use error::{Error, ExprError, Result};
