//! Pyramid pooling: multi-scale average context, upsampled back and fused by
//! a 1x1 projection to the input's channel count.

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::tape::{Tape, Var};

use super::{conv, declare_conv};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PyramidConfig {
    pub bin_sizes: Vec<usize>,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            bin_sizes: vec![1, 2, 3, 6],
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bin_sizes.is_empty() {
            return Err(Error::config("pyramid_bins", "at least one bin size required"));
        }
        if self.bin_sizes.contains(&0) {
            return Err(Error::config("pyramid_bins", "bin sizes must be >= 1"));
        }
        if self.bin_sizes.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("pyramid_bins", "bin sizes must be ascending"));
        }
        Ok(())
    }

    /// Bins clamped to a feature of spatial size `h x w`.
    pub fn clamped(&self, h: usize, w: usize) -> Vec<usize> {
        self.bin_sizes.iter().map(|&b| b.min(h).min(w)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct PyramidPooling {
    pub prefix: String,
    pub channels: usize,
    pub cfg: PyramidConfig,
}

impl PyramidPooling {
    pub fn new(prefix: impl Into<String>, channels: usize, cfg: PyramidConfig) -> Self {
        PyramidPooling {
            prefix: prefix.into(),
            channels,
            cfg,
        }
    }

    fn proj(&self) -> String {
        format!("{}.proj", self.prefix)
    }

    pub fn declare(&self, params: &mut ModelParams, seed: u64) -> Result<()> {
        let c_in = self.channels * (1 + self.cfg.bin_sizes.len());
        declare_conv(params, &self.proj(), c_in, self.channels, 1, seed)
    }

    /// The pooled-and-upsampled context maps, one per bin, each shaped like `x`.
    pub fn context_maps(&self, tape: &mut Tape, x: Var) -> Result<Vec<Var>> {
        let s = tape.shape(x);
        self.cfg
            .clamped(s.h, s.w)
            .into_iter()
            .map(|b| {
                let pooled = tape.adaptive_avgpool2d(x, b, b)?;
                tape.bilinear_upsample(pooled, s.h, s.w)
            })
            .collect()
    }

    /// Pre-activation projection of `[x; context maps]`.
    pub fn project(&self, tape: &mut Tape, params: &ModelParams, x: Var) -> Result<Var> {
        let mut parts = vec![x];
        parts.extend(self.context_maps(tape, x)?);
        let cat = tape.concat_channels(&parts)?;
        conv(tape, params, &self.proj(), cat, 0)
    }

    /// Contextual information: same shape as `x`.
    pub fn forward(&self, tape: &mut Tape, params: &ModelParams, x: Var) -> Result<Var> {
        let y = self.project(tape, params, x)?;
        Ok(tape.relu(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor4};

    #[test]
    fn output_shape_matches_input() {
        let pp = PyramidPooling::new("pp", 8, PyramidConfig::default());
        let mut p = ModelParams::new();
        pp.declare(&mut p, 0).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::full(Shape::new(1, 8, 24, 24), 0.2));
        let y = pp.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.shape(y), Shape::new(1, 8, 24, 24));
    }

    #[test]
    fn constant_propagates_through_averaging_projection() {
        let c = 8;
        let pp = PyramidPooling::new("pp", c, PyramidConfig::default());
        let groups = 1 + pp.cfg.bin_sizes.len();
        let mut p = ModelParams::new();
        pp.declare(&mut p, 0).unwrap();
        let w = Tensor4::from_fn(Shape::new(c, c * groups, 1, 1), |o, i, _, _| {
            if i % c == o {
                1.0 / groups as f64
            } else {
                0.0
            }
        });
        p.set_value("pp.proj.weight", w).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::full(Shape::new(1, c, 12, 12), 1.75));
        let y = pp.project(&mut tape, &p, x).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.75).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn bins_clamp_to_feature_size() {
        let cfg = PyramidConfig::default();
        assert_eq!(cfg.clamped(2, 2), vec![1, 2, 2, 2]);
        assert_eq!(cfg.clamped(4, 8), vec![1, 2, 3, 4]);
        assert!(PyramidConfig { bin_sizes: vec![3, 1] }.validate().is_err());
    }
}
