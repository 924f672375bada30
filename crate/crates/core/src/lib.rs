pub mod channel_model;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod kv;
pub mod matrix_core;
pub mod pilot_design;
pub mod sdp_engine;

pub use error::{Error, Result};
