pub mod error;
pub mod gainbound;
pub mod ingest;
pub mod linalg;
pub mod lmi;
pub mod moments;
pub mod report;
pub mod simulator;

pub use error::{Error, Result};
