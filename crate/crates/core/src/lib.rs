pub mod codec;
pub mod config;
pub mod error;
pub mod eval;
pub mod inference;
pub mod kernels;
pub mod masking;
pub mod model;
pub mod npy;
pub mod sequence;
pub mod service;
pub mod toyworld;
pub mod training;

pub use error::{Error, Result};
