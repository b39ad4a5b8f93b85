//! Tools for counting linear patterns in subsets of finite abelian groups:
//! homomorphism densities and grid norms of adjacency functions, constructive
//! rectangle extraction, Bohr-set machinery with exact regularity analysis, a
//! desk-scale density-increment engine, explicit spread-yet-pattern-rich set
//! constructions, and Cayley sum-graph clique experiments.

pub mod adjacency;
pub mod bohr;
pub mod cayley;
pub mod cli;
pub mod config;
pub mod constructions;
pub mod counting;
pub mod drc;
pub mod elim;
pub mod error;
pub mod fourier;
pub mod group;
pub mod increment;
pub mod linear;
pub mod par;
pub mod report;

pub use error::{Error, Result};
