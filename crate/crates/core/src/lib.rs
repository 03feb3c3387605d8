//! Projection-free policy-gradient solvers for zero-sum linear-quadratic games.

pub mod diagnostics;
pub mod error;
pub mod game;
pub mod generate;
pub mod inner;
pub mod linalg;
pub mod outer;
pub mod rates;

pub use error::{Error, InitError, Result};
