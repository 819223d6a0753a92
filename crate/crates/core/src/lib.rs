pub mod cli;
pub mod curves;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod hypotheses;
pub mod metric;
pub mod minimizer;
pub mod quadrature;
pub mod ricci;

pub use error::{Error, Result};
