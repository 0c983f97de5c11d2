pub mod acceptance;
pub mod airy_model;
pub mod capacity;
pub mod error;
pub mod io;
pub mod kpz_engine;
pub mod lpp_core;
pub mod path_sampler;
pub mod rng;
pub mod stats_harness;

pub use error::{LabError, Result};
