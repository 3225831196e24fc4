//! Simulation and analysis of spatially dense MIMO channel measurements over
//! an area: channel synthesis, array geometries cut from the sampled grid,
//! MR/PO/ZF precoding, spatial SIR and sum-rate metrics, and a simulated
//! OFDM sounder.

pub mod config;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod gridio;
pub mod metrics;
pub mod precoding;
pub mod report;
pub mod scanpath;
pub mod scene;
pub mod sounder;
pub mod units;

pub use error::{Error, ErrorClass, Result};
