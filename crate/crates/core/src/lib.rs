pub mod environment;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod linalg;
pub mod model;
pub mod observables;
pub mod sho;

pub use error::{Error, Result};
