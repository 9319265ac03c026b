pub mod cli;
pub mod config;
pub mod error;
pub mod expr;
pub mod extremal;
pub mod mesh;
pub mod multifun;
pub mod operator;
pub mod spaces;
pub mod visolve;

pub use error::{Error, Result};
