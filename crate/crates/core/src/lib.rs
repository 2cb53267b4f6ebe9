pub mod ann;
pub mod circuit;
pub mod diagnostics;
pub mod error;
pub mod explain;
pub mod forward;
pub mod linalg;
pub mod selftest;
pub mod vsa;
pub mod weights;

pub use error::{Error, Result};
