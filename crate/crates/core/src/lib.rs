//! Numerical laboratory for decoupling inequalities attached to short
//! generalized Dirichlet sequences.

pub mod counting;
pub mod error;
pub mod fatap;
pub mod field;
pub mod highlow;
pub mod ineqlab;
pub mod intervals;
pub mod kernels;
pub mod numeric;
pub mod scenario;
pub mod seqgen;
pub mod transfer;

pub use error::{DeclabError, Result};
