//! Vision-language navigation on synthetic graph worlds, with retrievable modality-aligned
//! action prompts.

// index loops in the numeric kernels mirror the formulas they implement
#![allow(clippy::needless_range_loop)]

pub mod agent;
pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod encoders;
pub mod experiment;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod prompt_base;
pub mod tensor;
pub mod text;
pub mod training;
pub mod util;
pub mod world;

pub use error::{Error, Result};
