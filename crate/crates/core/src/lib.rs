pub mod data;
pub mod diversity;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod similarity;

pub use error::{Error, Result};
