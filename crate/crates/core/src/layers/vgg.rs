use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tape::{Tape, Var};

use super::{conv, declare_conv};

/// Convolutions per stage in VGG16.
pub const VGG16_CONV_COUNTS: [usize; 5] = [2, 2, 3, 3, 3];
/// Output channels per stage in VGG16.
pub const VGG16_WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VggStageConfig {
    /// 1-based.
    pub stage_index: usize,
    pub conv_count: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl VggStageConfig {
    /// Stage `stage_index` of VGG16 with widths scaled by `width_multiplier`.
    pub fn vgg16(stage_index: usize, in_channels: usize, width_multiplier: f64) -> Result<Self> {
        if !(1..=5).contains(&stage_index) {
            return Err(Error::config("stage_index", format!("{stage_index} not in 1..=5")));
        }
        if !(width_multiplier > 0.0 && width_multiplier.is_finite()) {
            return Err(Error::config("width_multiplier", "must be a positive real"));
        }
        let out_channels = (width_multiplier * VGG16_WIDTHS[stage_index - 1] as f64).round() as usize;
        if out_channels < 4 {
            return Err(Error::config(
                "width_multiplier",
                format!("stage {stage_index} would have {out_channels} channels; at least 4 required"),
            ));
        }
        Ok(VggStageConfig {
            stage_index,
            conv_count: VGG16_CONV_COUNTS[stage_index - 1],
            in_channels,
            out_channels,
        })
    }
}

/// `conv_count x (3x3 conv, pad 1 -> relu)` followed by a 2x2 max-pool.
#[derive(Clone, Debug)]
pub struct VggStage {
    pub prefix: String,
    pub cfg: VggStageConfig,
}

impl VggStage {
    pub fn new(prefix: impl Into<String>, cfg: VggStageConfig) -> Self {
        VggStage {
            prefix: prefix.into(),
            cfg,
        }
    }

    fn conv_name(&self, j: usize) -> String {
        format!("{}.conv{}", self.prefix, j + 1)
    }

    pub fn declare(&self, params: &mut ModelParams, seed: u64) -> Result<()> {
        let mut c_in = self.cfg.in_channels;
        for j in 0..self.cfg.conv_count {
            declare_conv(params, &self.conv_name(j), c_in, self.cfg.out_channels, 3, seed)?;
            c_in = self.cfg.out_channels;
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, params: &ModelParams, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.c != self.cfg.in_channels {
            return Err(Error::invalid(
                "vgg_stage",
                format!(
                    "{} expects {} input channels, got {s}",
                    self.prefix, self.cfg.in_channels
                ),
            ));
        }
        if s.h % 2 != 0 || s.w % 2 != 0 {
            return Err(Error::invalid(
                "vgg_stage",
                format!("{}: odd spatial dims {s}", self.prefix),
            ));
        }
        let mut h = x;
        for j in 0..self.cfg.conv_count {
            h = conv(tape, params, &self.conv_name(j), h, 1)?;
            h = tape.relu(h);
        }
        tape.maxpool2d(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor4};

    fn run(cfg: VggStageConfig, input: Shape, zero: bool) -> Tensor4 {
        let stage = VggStage::new("s", cfg);
        let mut params = ModelParams::new();
        stage.declare(&mut params, 3).unwrap();
        if zero {
            for p in params.iter_mut() {
                p.value = Tensor4::zeros(p.value.shape());
            }
        }
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::from_fn(input, |_, c, h, w| ((c + h * w) as f64).sin()));
        let y = stage.forward(&mut tape, &params, x).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn full_width_stage_one_shape() {
        let cfg = VggStageConfig::vgg16(1, 3, 1.0).unwrap();
        assert_eq!(cfg.conv_count, 2);
        let out = run(cfg, Shape::new(1, 3, 64, 64), false);
        assert_eq!(out.shape(), Shape::new(1, 64, 32, 32));
    }

    #[test]
    fn eighth_width_stage_five_shape() {
        let cfg = VggStageConfig::vgg16(5, 64, 0.125).unwrap();
        assert_eq!((cfg.conv_count, cfg.out_channels), (3, 64));
        let out = run(cfg, Shape::new(1, 64, 4, 4), false);
        assert_eq!(out.shape(), Shape::new(1, 64, 2, 2));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let cfg = VggStageConfig::vgg16(2, 8, 0.125).unwrap();
        let out = run(cfg, Shape::new(2, 8, 8, 6), true);
        assert_eq!(out.shape(), Shape::new(2, 16, 4, 3));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn widths_match_vgg16_at_unit_multiplier() {
        let mut c_in = 3;
        for (i, (&w, &n)) in VGG16_WIDTHS.iter().zip(&VGG16_CONV_COUNTS).enumerate() {
            let cfg = VggStageConfig::vgg16(i + 1, c_in, 1.0).unwrap();
            assert_eq!((cfg.out_channels, cfg.conv_count), (w, n));
            c_in = w;
        }
    }

    #[test]
    fn rejects_too_narrow_and_odd_input() {
        assert!(VggStageConfig::vgg16(1, 3, 0.05).is_err());
        let cfg = VggStageConfig::vgg16(1, 3, 0.125).unwrap();
        let stage = VggStage::new("s", cfg);
        let mut params = ModelParams::new();
        stage.declare(&mut params, 0).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::zeros(Shape::new(1, 3, 5, 4)));
        assert!(stage.forward(&mut tape, &params, x).is_err());
    }
}
