//! Iterative refinement of Christoffel-function sampling measures for
//! weighted least squares with general dictionaries.

pub mod cd_approx;
pub mod christoffel;
pub mod dictionaries;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod measures;
pub mod metrics;
pub mod refinement;
pub mod weighted_ls;

pub use error::{Error, Result};
