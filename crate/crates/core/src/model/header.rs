use crate::error::{Error, Result};
use crate::layers::{conv, declare_conv};
use crate::params::ModelParams;
use crate::tape::{Tape, Var};

/// Density regression head: x4 bilinear upsample, two 3x3 conv+relu, then a
/// 1x1 conv to one channel and a final relu.
#[derive(Clone, Debug)]
pub struct RegressionHeader {
    pub prefix: String,
    pub widths: [usize; 3],
}

impl RegressionHeader {
    pub const UPSAMPLE: usize = 4;
    /// Multiplier on the He-normal std of the last convolution. A full-scale
    /// start predicts counts an order of magnitude too high and the first
    /// optimizer steps push every output below the final relu.
    pub const FINAL_INIT_SCALE: f64 = 0.01;

    pub fn new(prefix: impl Into<String>, in_channels: usize) -> Self {
        let c1 = (in_channels / 2).max(1);
        let c2 = (in_channels / 4).max(1);
        RegressionHeader {
            prefix: prefix.into(),
            widths: [in_channels, c1, c2],
        }
    }

    fn name(&self, j: usize) -> String {
        format!("{}.conv{j}", self.prefix)
    }

    /// Name of the last 1x1 convolution.
    pub fn final_conv(&self) -> String {
        self.name(3)
    }

    pub fn declare(&self, params: &mut ModelParams, seed: u64) -> Result<()> {
        let [c0, c1, c2] = self.widths;
        declare_conv(params, &self.name(1), c0, c1, 3, seed)?;
        declare_conv(params, &self.name(2), c1, c2, 3, seed)?;
        declare_conv(params, &self.name(3), c2, 1, 1, seed)?;
        let w = format!("{}.weight", self.final_conv());
        let scaled = params.value(&w)?.map(|v| v * Self::FINAL_INIT_SCALE);
        params.set_value(&w, scaled)
    }

    pub fn forward(&self, tape: &mut Tape, params: &ModelParams, f5: Var) -> Result<Var> {
        let s = tape.shape(f5);
        if s.c != self.widths[0] {
            return Err(Error::invalid(
                "regression_header",
                format!("expected {} channels, got {s}", self.widths[0]),
            ));
        }
        let up = tape.bilinear_upsample(f5, s.h * Self::UPSAMPLE, s.w * Self::UPSAMPLE)?;
        let h = conv(tape, params, &self.name(1), up, 1)?;
        let h = tape.relu(h);
        let h = conv(tape, params, &self.name(2), h, 1)?;
        let h = tape.relu(h);
        let h = conv(tape, params, &self.name(3), h, 0)?;
        Ok(tape.relu(h))
    }
}
