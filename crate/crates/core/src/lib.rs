//! Local-popularity collaborative filtering on the permuted block-constant
//! rating model.

pub mod channel;
pub mod cli;
pub mod error;
pub mod filter;
pub mod harness;
pub mod model;
pub mod movielens;
pub mod theory;

pub use error::{Error, Result};
