//! Brightness-adaptive infrared/visible image fusion.
//!
//! The crate bundles a small reverse-mode tensor engine, the fusion model
//! (shared encoder, brightness adaptive gate, decoder), its losses, an
//! alternating two-stage trainer, a synthetic data generator, fusion-quality
//! metrics and the `bafusion` command-line front end.

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod imageio;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod robustness;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
