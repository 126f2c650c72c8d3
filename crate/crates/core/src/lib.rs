//! Heat-kernel invariants of second-order operators built from a
//! matrix-valued Dirac symbol, with brute-force discretization oracles.

pub mod algebra;
pub mod boundary;
pub mod config;
pub mod error;
pub mod field;
pub mod finsler;
pub mod interior;
mod jet;
pub mod oracle;
pub mod quadrature;
pub mod report;
pub mod symbol;

pub use error::{Error, Result};
