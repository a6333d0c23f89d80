pub mod config;
pub mod conic;
pub mod coordinator;
pub mod error;
pub mod learn;
pub mod market;
pub mod netmodel;
pub mod nn;
pub mod opf;
pub mod policy;
pub mod scenario;

pub use error::{Error, Result};
