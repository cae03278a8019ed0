//! Composite blocks: VGG16 stages, channel/spatial attention and the
//! pyramid-pooling context extractor.
//!
//! Each block knows its parameter-name prefix. `declare` adds its
//! parameters to a [`ModelParams`]; `forward` binds them on a tape.

mod attention;
mod pyramid;
mod vgg;

pub use attention::{AttentionConfig, ChannelAttention, SpatialAttention};
pub use pyramid::{PyramidConfig, PyramidPooling};
pub use vgg::{VggStage, VggStageConfig, VGG16_CONV_COUNTS, VGG16_WIDTHS};

use crate::error::Result;
use crate::params::ModelParams;
use crate::tape::{Tape, Var};
use crate::tensor::Shape;

/// Declares `{prefix}.weight` (He-normal) and `{prefix}.bias` (zero) for a
/// square convolution.
pub(crate) fn declare_conv(
    params: &mut ModelParams,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    seed: u64,
) -> Result<()> {
    params.insert_he(
        &format!("{prefix}.weight"),
        Shape::new(c_out, c_in, k, k),
        c_in * k * k,
        seed,
    )?;
    params.insert(
        format!("{prefix}.bias"),
        crate::tensor::Tensor4::zeros(Shape::new(1, c_out, 1, 1)),
    )?;
    Ok(())
}

pub(crate) fn conv(tape: &mut Tape, params: &ModelParams, prefix: &str, x: Var, pad: usize) -> Result<Var> {
    let w = tape.param(params, &format!("{prefix}.weight"))?;
    let b = tape.param(params, &format!("{prefix}.bias"))?;
    tape.conv2d(x, w, b, 1, pad)
}

pub(crate) fn declare_linear(
    params: &mut ModelParams,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    seed: u64,
) -> Result<()> {
    params.insert_he(&format!("{prefix}.weight"), Shape::new(d_out, d_in, 1, 1), d_in, seed)?;
    params.insert(
        format!("{prefix}.bias"),
        crate::tensor::Tensor4::zeros(Shape::new(1, d_out, 1, 1)),
    )?;
    Ok(())
}

pub(crate) fn linear(tape: &mut Tape, params: &ModelParams, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(params, &format!("{prefix}.weight"))?;
    let b = tape.param(params, &format!("{prefix}.bias"))?;
    tape.linear(x, w, b)
}
