//! Desk-scale encoder-decoder codec language model with progress-monitoring
//! rotary position embeddings.

pub mod attention;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod model;
pub mod numeric;
pub mod positional;
pub mod selftest;

pub use error::{Error, Result};
