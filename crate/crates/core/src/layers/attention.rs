//! CBAM-style channel and spatial attention.

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tape::{Tape, Var};

use super::{conv, declare_conv, declare_linear, linear};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub reduction_ratio: usize,
    pub spatial_kernel: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            reduction_ratio: 4,
            spatial_kernel: 7,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reduction_ratio == 0 {
            return Err(Error::config("attention_reduction", "must be >= 1"));
        }
        if self.spatial_kernel % 2 == 0 {
            return Err(Error::config("spatial_kernel", "must be odd"));
        }
        Ok(())
    }

    /// Hidden width of the channel MLP; never below one unit.
    pub fn bottleneck(&self, channels: usize) -> usize {
        (channels / self.reduction_ratio).max(1)
    }
}

/// `x * sigmoid(mlp(avg(x)) + mlp(max(x)))`, per item and channel, with the
/// MLP shared between the two pooled descriptors.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub prefix: String,
    pub channels: usize,
    pub cfg: AttentionConfig,
}

impl ChannelAttention {
    pub fn new(prefix: impl Into<String>, channels: usize, cfg: AttentionConfig) -> Self {
        ChannelAttention {
            prefix: prefix.into(),
            channels,
            cfg,
        }
    }

    pub fn declare(&self, params: &mut ModelParams, seed: u64) -> Result<()> {
        let hidden = self.cfg.bottleneck(self.channels);
        declare_linear(params, &format!("{}.fc1", self.prefix), self.channels, hidden, seed)?;
        declare_linear(params, &format!("{}.fc2", self.prefix), hidden, self.channels, seed)
    }

    fn mlp(&self, tape: &mut Tape, params: &ModelParams, x: Var) -> Result<Var> {
        let h = linear(tape, params, &format!("{}.fc1", self.prefix), x)?;
        let h = tape.relu(h);
        linear(tape, params, &format!("{}.fc2", self.prefix), h)
    }

    pub fn forward(&self, tape: &mut Tape, params: &ModelParams, x: Var) -> Result<Var> {
        let avg = tape.global_avg(x);
        let max = tape.global_max(x);
        let a = self.mlp(tape, params, avg)?;
        let m = self.mlp(tape, params, max)?;
        let logits = tape.add(a, m)?;
        let gate = tape.sigmoid(logits);
        tape.scale_channels(x, gate)
    }
}

/// `x * sigmoid(conv_kxk([mean_c(x); max_c(x)]))`, per pixel.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub prefix: String,
    pub cfg: AttentionConfig,
}

impl SpatialAttention {
    pub fn new(prefix: impl Into<String>, cfg: AttentionConfig) -> Self {
        SpatialAttention {
            prefix: prefix.into(),
            cfg,
        }
    }

    pub fn declare(&self, params: &mut ModelParams, seed: u64) -> Result<()> {
        declare_conv(
            params,
            &format!("{}.conv", self.prefix),
            2,
            1,
            self.cfg.spatial_kernel,
            seed,
        )
    }

    pub fn forward(&self, tape: &mut Tape, params: &ModelParams, x: Var) -> Result<Var> {
        let mean = tape.channel_mean(x);
        let max = tape.channel_max(x);
        let desc = tape.concat_channels(&[mean, max])?;
        let pad = (self.cfg.spatial_kernel - 1) / 2;
        let logits = conv(tape, params, &format!("{}.conv", self.prefix), desc, pad)?;
        let gate = tape.sigmoid(logits);
        tape.scale_pixels(x, gate)
    }
}
