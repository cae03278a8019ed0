//! Three-stream RGB-thermal crowd counting.
//!
//! The crate is self-contained: a small reverse-mode autograd core
//! ([`tape`], [`ops`]), the network blocks built from it ([`layers`],
//! [`model`]), point-supervised training objectives and counting metrics
//! ([`loss`], [`metrics`]), a synthetic paired-modality data generator
//! ([`data`]) and the optimization/evaluation driver ([`train`]).

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub(crate) mod kv;
pub mod layers;
pub mod loss;
pub mod metrics;
pub mod model;
pub(crate) mod ops;
pub mod par;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use par::Exec;
pub use params::{ModelParams, ParamId, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Shape, Tensor4};
