pub mod autodiff;
pub mod bench;
pub mod error;
pub mod fem;
pub mod linalg;
pub mod network;
pub mod par;
pub mod solvers;
pub mod variational;

pub use error::{Error, Result};
