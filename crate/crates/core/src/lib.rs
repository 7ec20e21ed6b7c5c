//! Ising random fields on finite lattice boxes, the disagreement-percolation
//! coupling of their conditional laws, and exact or Monte Carlo audits of the
//! variance inequalities and Glauber relaxation bounds that follow from it.

pub mod coupling;
pub mod audit;
pub mod config;
pub mod error;
pub mod expr;
pub mod functionals;
pub mod glauber;
pub mod lattice;
pub mod model;
pub mod percolation;
pub mod rng;

pub use error::{Error, Result};
