use crate::error::{Error, Result};
use crate::layers::VggStage;
use crate::params::ModelParams;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor4};

use super::{Iim, RegressionHeader, TafnetConfig, Variant};

/// Stream prefixes. The main stream sees the 4-channel RGB+thermal stack.
pub const MAIN: &str = "main";
pub const AUX_RGB: &str = "aux.rgb";
pub const AUX_THERMAL: &str = "aux.thermal";
pub const HEAD: &str = "head";

/// Switches used by tests and ablations; the defaults are the model proper.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Replace every fusion gate weight with the constant 0.
    pub zero_gates: bool,
    /// Replace the (normalized) thermal input with zeros in every stream.
    pub zero_thermal: bool,
    /// Replace the auxiliary thermal stream's input with zeros; the main
    /// stream still sees the thermal channel.
    pub zero_aux_thermal: bool,
}

/// Per-stage tape handles. Auxiliary features are absent for the baseline.
#[derive(Clone, Copy, Debug)]
pub struct StageVars {
    pub f_t: Option<Var>,
    pub f_rgb: Option<Var>,
    pub f_c: Var,
    pub f_cimp: Var,
}

/// Materialized features of one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageFeatures {
    pub f_t: Tensor4,
    pub f_rgb: Tensor4,
    pub f_c: Tensor4,
    pub f_cimp: Tensor4,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub density: Var,
    pub stages: [StageVars; 5],
}

/// Block layout derived from a [`TafnetConfig`]; holds no parameter values.
#[derive(Clone, Debug)]
pub struct Tafnet {
    pub cfg: TafnetConfig,
    pub main: Vec<VggStage>,
    pub aux_rgb: Vec<VggStage>,
    pub aux_thermal: Vec<VggStage>,
    pub iims: Vec<Iim>,
    pub head: RegressionHeader,
}

fn stream(prefix: &str, cfg: &TafnetConfig, in_channels: usize) -> Result<Vec<VggStage>> {
    Ok(cfg
        .stage_configs(in_channels)?
        .into_iter()
        .map(|c| VggStage::new(format!("{prefix}.stage{}", c.stage_index), c))
        .collect())
}

impl Tafnet {
    pub fn new(cfg: TafnetConfig) -> Result<Self> {
        cfg.validate()?;
        let main = stream(MAIN, &cfg, 4)?;
        let (aux_rgb, aux_thermal, iims) = if cfg.variant.has_fusion() {
            let iims = main
                .iter()
                .map(|s| {
                    Iim::new(
                        &format!("iim.stage{}", s.cfg.stage_index),
                        s.cfg.out_channels,
                        &cfg.pyramid,
                        cfg.attention,
                        cfg.variant,
                    )
                })
                .collect();
            (stream(AUX_RGB, &cfg, 3)?, stream(AUX_THERMAL, &cfg, 1)?, iims)
        } else {
            (Vec::new(), Vec::new(), Vec::new())
        };
        let head = RegressionHeader::new(HEAD, main[4].cfg.out_channels);
        Ok(Tafnet {
            cfg,
            main,
            aux_rgb,
            aux_thermal,
            iims,
            head,
        })
    }

    pub fn declare(&self, params: &mut ModelParams, seed: u64) -> Result<()> {
        for s in self.main.iter().chain(&self.aux_rgb).chain(&self.aux_thermal) {
            s.declare(params, seed)?;
        }
        for iim in &self.iims {
            iim.declare(params, self.cfg.gate_init, seed)?;
        }
        self.head.declare(params, seed)
    }

    fn check_inputs(&self, rgb: Shape, thermal: Shape) -> Result<()> {
        if rgb.c != 3 || thermal.c != 1 || (rgb.n, rgb.h, rgb.w) != (thermal.n, thermal.h, thermal.w) {
            return Err(Error::ShapeMismatch {
                op: "tafnet forward (rgb vs thermal)",
                lhs: rgb,
                rhs: thermal,
            });
        }
        if rgb.h % 32 != 0 || rgb.w % 32 != 0 {
            return Err(Error::invalid(
                "tafnet forward",
                format!("input {}x{} not divisible by 32", rgb.h, rgb.w),
            ));
        }
        Ok(())
    }

    /// Density map at 1/8 input resolution, plus per-stage handles.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        rgb: &Tensor4,
        thermal: &Tensor4,
        opts: ForwardOptions,
    ) -> Result<ForwardOutput> {
        self.check_inputs(rgb.shape(), thermal.shape())?;
        let thermal = if opts.zero_thermal {
            Tensor4::zeros(thermal.shape())
        } else {
            thermal.clone()
        };
        let zeros = opts.zero_aux_thermal.then(|| Tensor4::zeros(thermal.shape()));
        let x_rgb = tape.constant(rgb.clone());
        let x_t = tape.constant(thermal);
        let mut x_main = tape.concat_channels(&[x_rgb, x_t])?;
        let (mut x_rgb, mut x_t) = (x_rgb, zeros.map_or(x_t, |z| tape.constant(z)));

        let mut stages = Vec::with_capacity(5);
        for i in 0..5 {
            let f_c = self.main[i].forward(tape, params, x_main)?;
            let sv = if let Some(iim) = self.iims.get(i) {
                let f_rgb = self.aux_rgb[i].forward(tape, params, x_rgb)?;
                let f_t = self.aux_thermal[i].forward(tape, params, x_t)?;
                let f_cimp = iim.forward(tape, params, f_t, f_rgb, f_c, opts.zero_gates)?;
                x_rgb = f_rgb;
                x_t = f_t;
                StageVars {
                    f_t: Some(f_t),
                    f_rgb: Some(f_rgb),
                    f_c,
                    f_cimp,
                }
            } else {
                StageVars {
                    f_t: None,
                    f_rgb: None,
                    f_c,
                    f_cimp: f_c,
                }
            };
            x_main = sv.f_cimp;
            stages.push(sv);
        }
        let density = self.head.forward(tape, params, x_main)?;
        let stages: [StageVars; 5] = stages.try_into().expect("five stages");
        Ok(ForwardOutput { density, stages })
    }
}

/// Architecture plus parameter values.
#[derive(Clone, Debug)]
pub struct TafnetModel {
    pub arch: Tafnet,
    pub params: ModelParams,
}

/// Builds a model with He-normal weights. Each parameter's initial value
/// depends only on `(seed, name)`, so variants built from one seed share the
/// weights of the blocks they have in common.
pub fn build_tafnet(cfg: TafnetConfig, seed: u64) -> Result<TafnetModel> {
    let arch = Tafnet::new(cfg)?;
    let mut params = ModelParams::new();
    arch.declare(&mut params, seed)?;
    Ok(TafnetModel { arch, params })
}

impl TafnetModel {
    pub fn cfg(&self) -> &TafnetConfig {
        &self.arch.cfg
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        rgb: &Tensor4,
        thermal: &Tensor4,
        opts: ForwardOptions,
    ) -> Result<ForwardOutput> {
        self.arch.forward(tape, &self.params, rgb, thermal, opts)
    }

    /// Density maps without keeping a tape around.
    pub fn predict(&self, rgb: &Tensor4, thermal: &Tensor4, opts: ForwardOptions) -> Result<Tensor4> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, rgb, thermal, opts)?;
        Ok(tape.value(out.density).clone())
    }

    /// Materialized stage features. For the baseline, the auxiliary slots
    /// hold copies of `F_C`.
    pub fn stage_features(&self, rgb: &Tensor4, thermal: &Tensor4) -> Result<Vec<StageFeatures>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, rgb, thermal, ForwardOptions::default())?;
        Ok(out
            .stages
            .iter()
            .map(|s| {
                let v = |x: Option<Var>| tape.value(x.unwrap_or(s.f_c)).clone();
                StageFeatures {
                    f_t: v(s.f_t),
                    f_rgb: v(s.f_rgb),
                    f_c: tape.value(s.f_c).clone(),
                    f_cimp: tape.value(s.f_cimp).clone(),
                }
            })
            .collect())
    }

    /// Baseline model carrying this model's main-stream and header weights.
    pub fn baseline_view(&self) -> Result<TafnetModel> {
        let cfg = TafnetConfig {
            variant: Variant::Baseline,
            ..self.arch.cfg.clone()
        };
        let arch = Tafnet::new(cfg)?;
        let params = self
            .params
            .filtered(|n| n.starts_with(&format!("{MAIN}.")) || n.starts_with(&format!("{HEAD}.")));
        Ok(TafnetModel { arch, params })
    }
}

/// Spatial sum per batch item of a single-channel density map.
pub fn count(density: &Tensor4) -> Result<Vec<f64>> {
    let s = density.shape();
    if s.c != 1 {
        return Err(Error::invalid("count", format!("expected one channel, got {s}")));
    }
    Ok((0..s.n).map(|n| crate::metrics::exact_sum(density.item(n))).collect())
}
