//! Disaggregate bundle method for oracle-structured distributed convex optimization.

pub mod agents;
pub mod bundle;
pub mod error;
pub mod instance;
pub mod master;
pub mod model;
pub mod precond;
pub mod qp;
pub mod sparse;

pub use error::{Error, Result};
