//! The three-stream network: main stream on the RGB+thermal stack, two
//! auxiliary single-modality streams, a fusion module after every stage and
//! a density regression head.

pub mod checkpoint;
mod config;
mod header;
mod iim;
mod tafnet;

pub use config::{TafnetConfig, Variant};
pub use header::RegressionHeader;
pub use iim::Iim;
pub use tafnet::{
    build_tafnet, count, ForwardOptions, ForwardOutput, StageFeatures, StageVars, Tafnet, TafnetModel, AUX_RGB,
    AUX_THERMAL, HEAD, MAIN,
};
