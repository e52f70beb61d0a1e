pub mod analysis;
pub mod cli;
pub mod error;
pub mod lattice;
pub mod linalg;
pub mod master;
pub mod noise;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
