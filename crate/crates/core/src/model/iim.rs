//! Information improvement module: fuses the modality-specific features into
//! the combination feature of one stage.
//!
//! ```text
//! CI_x   = pyramid_x(F_x)                      for x in {T, RGB, C}
//! CI_T   = spatial(channel(CI_T))              (full variant only)
//! F_Cimp = F_C + sigmoid(g_T) (CI_T - CI_C) + sigmoid(g_RGB) (CI_RGB - CI_C)
//! ```

use crate::error::{Error, Result};
use crate::layers::{AttentionConfig, ChannelAttention, PyramidConfig, PyramidPooling, SpatialAttention};
use crate::params::ModelParams;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor4};

use super::Variant;

#[derive(Clone, Debug)]
pub struct Iim {
    pub pyramid_t: PyramidPooling,
    pub pyramid_rgb: PyramidPooling,
    pub pyramid_c: PyramidPooling,
    /// Present for the full variant only.
    pub attention: Option<(ChannelAttention, SpatialAttention)>,
    pub gate_t: String,
    pub gate_rgb: String,
}

impl Iim {
    pub fn new(
        prefix: &str,
        channels: usize,
        pyramid: &PyramidConfig,
        attention: AttentionConfig,
        variant: Variant,
    ) -> Self {
        let pp = |path: &str| PyramidPooling::new(format!("{prefix}.{path}"), channels, pyramid.clone());
        let attention = (variant == Variant::Full).then(|| {
            (
                ChannelAttention::new(format!("{prefix}.ca"), channels, attention),
                SpatialAttention::new(format!("{prefix}.sa"), attention),
            )
        });
        Iim {
            pyramid_t: pp("pyramid_t"),
            pyramid_rgb: pp("pyramid_rgb"),
            pyramid_c: pp("pyramid_c"),
            attention,
            gate_t: format!("{prefix}.gate_t"),
            gate_rgb: format!("{prefix}.gate_rgb"),
        }
    }

    pub fn declare(&self, params: &mut ModelParams, gate_init: f64, seed: u64) -> Result<()> {
        self.pyramid_t.declare(params, seed)?;
        self.pyramid_rgb.declare(params, seed)?;
        self.pyramid_c.declare(params, seed)?;
        if let Some((ca, sa)) = &self.attention {
            ca.declare(params, seed)?;
            sa.declare(params, seed)?;
        }
        params.insert(self.gate_t.clone(), Tensor4::scalar(gate_init))?;
        params.insert(self.gate_rgb.clone(), Tensor4::scalar(gate_init))?;
        Ok(())
    }

    /// Returns `F_Cimp`. With `zero_gates`, both residual weights are the
    /// constant 0 instead of `sigmoid(g)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        f_t: Var,
        f_rgb: Var,
        f_c: Var,
        zero_gates: bool,
    ) -> Result<Var> {
        let s = tape.shape(f_c);
        for other in [f_t, f_rgb] {
            if tape.shape(other) != s {
                return Err(Error::ShapeMismatch {
                    op: "iim",
                    lhs: s,
                    rhs: tape.shape(other),
                });
            }
        }
        let mut ci_t = self.pyramid_t.forward(tape, params, f_t)?;
        let ci_rgb = self.pyramid_rgb.forward(tape, params, f_rgb)?;
        let ci_c = self.pyramid_c.forward(tape, params, f_c)?;
        if let Some((ca, sa)) = &self.attention {
            ci_t = ca.forward(tape, params, ci_t)?;
            ci_t = sa.forward(tape, params, ci_t)?;
        }
        let ri_ct = tape.sub(ci_t, ci_c)?;
        let ri_crgb = tape.sub(ci_rgb, ci_c)?;

        let (w_t, w_rgb) = if zero_gates {
            let z = tape.constant(Tensor4::zeros(Shape::scalar()));
            (z, z)
        } else {
            let g_t = tape.param(params, &self.gate_t)?;
            let g_rgb = tape.param(params, &self.gate_rgb)?;
            (tape.sigmoid(g_t), tape.sigmoid(g_rgb))
        };
        let a = tape.mul_broadcast(ri_ct, w_t)?;
        let b = tape.mul_broadcast(ri_crgb, w_rgb)?;
        let out = tape.add(f_c, a)?;
        tape.add(out, b)
    }
}
