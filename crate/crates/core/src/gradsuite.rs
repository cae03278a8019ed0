//! Finite-difference checks of every differentiable op and block, plus one
//! end-to-end check through the full network and loss.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Point;
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckOptions, Probe};
use crate::layers::{
    AttentionConfig, ChannelAttention, PyramidConfig, PyramidPooling, SpatialAttention, VggStage, VggStageConfig,
};
use crate::loss::{bayesian_loss, mse_loss, Background, BayesianLossConfig};
use crate::model::{build_tafnet, ForwardOptions, Iim, RegressionHeader, TafnetConfig, Variant};
use crate::par::Exec;
use crate::params::ModelParams;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor4};

/// Tolerance for single ops.
pub const OP_TOLERANCE: f64 = 1e-6;
/// Tolerance for composite blocks and losses.
pub const BLOCK_TOLERANCE: f64 = 1e-5;
/// Tolerance for the whole network.
pub const END_TO_END_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seeds: usize,
    /// Network used by the end-to-end check.
    pub model: TafnetConfig,
    pub loss: BayesianLossConfig,
    pub exec: Exec,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seeds: 10,
            model: TafnetConfig::default(),
            loss: BayesianLossConfig::default(),
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub probes: usize,
    /// Probes dropped for straddling a kink.
    pub skipped: usize,
    pub worst: Option<Probe>,
}

/// Largest fraction of probes a check may skip and still pass.
pub const MAX_SKIPPED_FRACTION: f64 = 0.05;

impl CheckResult {
    pub fn passed(&self) -> bool {
        let total = self.probes + self.skipped;
        self.max_rel_error < self.tolerance
            && self.probes > 0
            && self.skipped as f64 <= MAX_SKIPPED_FRACTION * total as f64
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "check\tprobes\tskipped\tmax_rel_error\ttolerance\tstatus")?;
        for c in &self.checks {
            write!(
                f,
                "{}\t{}\t{}\t{:.3e}\t{:.0e}\t{}",
                c.name,
                c.probes,
                c.skipped,
                c.max_rel_error,
                c.tolerance,
                if c.passed() { "pass" } else { "FAIL" }
            )?;
            match (&c.worst, c.passed()) {
                (Some(p), false) => writeln!(
                    f,
                    "\t{}[{}] analytic {} numeric {}",
                    p.param, p.index, p.analytic, p.numeric
                )?,
                _ => writeln!(f)?,
            }
        }
        Ok(())
    }
}

type LossFn = Box<dyn Fn(&mut Tape, &ModelParams) -> Result<Var> + Sync + Send>;

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor4 {
    let data = (0..shape.len()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor4::new(shape, data).expect("valid shape")
}

/// `sum(v * r)` for a fixed random `r`, so every output element carries a
/// distinct weight in the loss.
fn project(tape: &mut Tape, v: Var, r: &Tensor4) -> Result<Var> {
    let r = tape.constant(r.clone());
    let p = tape.mul(v, r)?;
    Ok(tape.sum_all(p))
}

struct Case {
    params: ModelParams,
    f: LossFn,
    opts: GradCheckOptions,
}

fn case(params: ModelParams, f: LossFn) -> Case {
    Case {
        params,
        f,
        opts: GradCheckOptions {
            coords_per_param: Some(48),
            ..GradCheckOptions::default()
        },
    }
}

fn inputs(rng: &mut ChaCha8Rng, named: &[(&str, Shape)]) -> ModelParams {
    let mut p = ModelParams::new();
    for &(name, shape) in named {
        p.insert(name, uniform(rng, shape, -1.0, 1.0)).expect("unique");
    }
    p
}

/// Random weights for every parameter a block declared.
fn randomize(params: &mut ModelParams, rng: &mut ChaCha8Rng, scale: f64) {
    for p in params.iter_mut() {
        let s = p.value.shape();
        p.value = uniform(rng, s, -scale, scale);
    }
}

fn op_case(
    rng: &mut ChaCha8Rng,
    named: &[(&str, Shape)],
    out: Shape,
    body: fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Case {
    let params = inputs(rng, named);
    let names: Vec<String> = named.iter().map(|(n, _)| n.to_string()).collect();
    let r = uniform(rng, out, -1.0, 1.0);
    case(
        params,
        Box::new(move |tape, p| {
            let vars = names.iter().map(|n| tape.param(p, n)).collect::<Result<Vec<_>>>()?;
            let y = body(tape, &vars)?;
            project(tape, y, &r)
        }),
    )
}

fn block_case(
    mut params: ModelParams,
    rng: &mut ChaCha8Rng,
    input: Shape,
    out: Shape,
    body: impl Fn(&mut Tape, &ModelParams, Var) -> Result<Var> + Sync + Send + 'static,
) -> Case {
    randomize(&mut params, rng, 0.5);
    params.insert("input", uniform(rng, input, -1.0, 1.0)).expect("unique");
    let r = uniform(rng, out, -1.0, 1.0);
    case(
        params,
        Box::new(move |tape, p| {
            let x = tape.param(p, "input")?;
            let y = body(tape, p, x)?;
            project(tape, y, &r)
        }),
    )
}

type Builder = fn(&mut ChaCha8Rng, &SuiteOptions) -> Result<Case>;

fn s(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, c, h, w)
}

fn op_checks() -> Vec<(&'static str, Builder)> {
    vec![
        ("conv2d", |rng, _| {
            Ok(op_case(
                rng,
                &[("x", s(2, 3, 8, 8)), ("w", s(4, 3, 3, 3)), ("b", s(1, 4, 1, 1))],
                s(2, 4, 8, 8),
                |t, v| t.conv2d(v[0], v[1], v[2], 1, 1),
            ))
        }),
        ("conv2d_strided", |rng, _| {
            Ok(op_case(
                rng,
                &[("x", s(2, 3, 8, 8)), ("w", s(4, 3, 3, 3)), ("b", s(1, 4, 1, 1))],
                s(2, 4, 3, 3),
                |t, v| t.conv2d(v[0], v[1], v[2], 2, 0),
            ))
        }),
        ("conv2d_pointwise", |rng, _| {
            Ok(op_case(
                rng,
                &[("x", s(2, 4, 8, 8)), ("w", s(3, 4, 1, 1)), ("b", s(1, 3, 1, 1))],
                s(2, 3, 8, 8),
                |t, v| t.conv2d(v[0], v[1], v[2], 1, 0),
            ))
        }),
        ("maxpool2d", |rng, _| {
            Ok(op_case(rng, &[("x", s(2, 4, 8, 8))], s(2, 4, 4, 4), |t, v| {
                t.maxpool2d(v[0])
            }))
        }),
        ("adaptive_avgpool2d", |rng, _| {
            Ok(op_case(rng, &[("x", s(2, 4, 8, 7))], s(2, 4, 3, 5), |t, v| {
                t.adaptive_avgpool2d(v[0], 3, 5)
            }))
        }),
        ("bilinear_upsample", |rng, _| {
            Ok(op_case(rng, &[("x", s(2, 4, 3, 5))], s(2, 4, 8, 8), |t, v| {
                t.bilinear_upsample(v[0], 8, 8)
            }))
        }),
        ("relu", |rng, _| {
            Ok(op_case(rng, &[("x", s(2, 4, 8, 8))], s(2, 4, 8, 8), |t, v| {
                Ok(t.relu(v[0]))
            }))
        }),
        ("sigmoid", |rng, _| {
            Ok(op_case(rng, &[("x", s(2, 4, 8, 8))], s(2, 4, 8, 8), |t, v| {
                Ok(t.sigmoid(v[0]))
            }))
        }),
        ("add_sub_mul", |rng, _| {
            Ok(op_case(
                rng,
                &[("a", s(2, 4, 8, 8)), ("b", s(2, 4, 8, 8))],
                s(2, 4, 8, 8),
                |t, v| {
                    let x = t.add(v[0], v[1])?;
                    let y = t.sub(v[0], v[1])?;
                    t.mul(x, y)
                },
            ))
        }),
        ("scale_channels", |rng, _| {
            Ok(op_case(
                rng,
                &[("x", s(2, 4, 8, 8)), ("s", s(2, 4, 1, 1))],
                s(2, 4, 8, 8),
                |t, v| t.scale_channels(v[0], v[1]),
            ))
        }),
        ("scale_pixels", |rng, _| {
            Ok(op_case(
                rng,
                &[("x", s(2, 4, 8, 8)), ("m", s(2, 1, 8, 8))],
                s(2, 4, 8, 8),
                |t, v| t.scale_pixels(v[0], v[1]),
            ))
        }),
        ("mul_broadcast", |rng, _| {
            Ok(op_case(
                rng,
                &[("x", s(2, 4, 8, 8)), ("g", s(1, 1, 1, 1))],
                s(2, 4, 8, 8),
                |t, v| t.mul_broadcast(v[0], v[1]),
            ))
        }),
        ("concat_channels", |rng, _| {
            Ok(op_case(
                rng,
                &[("a", s(2, 3, 8, 8)), ("b", s(2, 1, 8, 8))],
                s(2, 4, 8, 8),
                |t, v| t.concat_channels(&[v[0], v[1]]),
            ))
        }),
        ("global_avg", |rng, _| {
            Ok(op_case(rng, &[("x", s(2, 4, 8, 8))], s(2, 4, 1, 1), |t, v| {
                Ok(t.global_avg(v[0]))
            }))
        }),
        ("global_max", |rng, _| {
            Ok(op_case(rng, &[("x", s(2, 4, 8, 8))], s(2, 4, 1, 1), |t, v| {
                Ok(t.global_max(v[0]))
            }))
        }),
        ("channel_mean", |rng, _| {
            Ok(op_case(rng, &[("x", s(2, 4, 8, 8))], s(2, 1, 8, 8), |t, v| {
                Ok(t.channel_mean(v[0]))
            }))
        }),
        ("channel_max", |rng, _| {
            Ok(op_case(rng, &[("x", s(2, 4, 8, 8))], s(2, 1, 8, 8), |t, v| {
                Ok(t.channel_max(v[0]))
            }))
        }),
        ("linear", |rng, _| {
            Ok(op_case(
                rng,
                &[("x", s(3, 5, 1, 1)), ("w", s(2, 5, 1, 1)), ("b", s(1, 2, 1, 1))],
                s(3, 2, 1, 1),
                |t, v| t.linear(v[0], v[1], v[2]),
            ))
        }),
    ]
}

fn block_checks() -> Vec<(&'static str, Builder)> {
    vec![
        ("vgg_stage", |rng, _| {
            let cfg = VggStageConfig {
                stage_index: 3,
                conv_count: 3,
                in_channels: 3,
                out_channels: 4,
            };
            let stage = VggStage::new("stage", cfg);
            let mut p = ModelParams::new();
            stage.declare(&mut p, 0)?;
            Ok(block_case(p, rng, s(2, 3, 8, 8), s(2, 4, 4, 4), move |t, p, x| {
                stage.forward(t, p, x)
            }))
        }),
        ("channel_attention", |rng, _| {
            let ca = ChannelAttention::new("ca", 8, AttentionConfig::default());
            let mut p = ModelParams::new();
            ca.declare(&mut p, 0)?;
            Ok(block_case(p, rng, s(2, 8, 8, 8), s(2, 8, 8, 8), move |t, p, x| {
                ca.forward(t, p, x)
            }))
        }),
        ("spatial_attention", |rng, _| {
            let sa = SpatialAttention::new("sa", AttentionConfig::default());
            let mut p = ModelParams::new();
            sa.declare(&mut p, 0)?;
            Ok(block_case(p, rng, s(2, 4, 8, 8), s(2, 4, 8, 8), move |t, p, x| {
                sa.forward(t, p, x)
            }))
        }),
        ("attention_chain", |rng, _| {
            let cfg = AttentionConfig::default();
            let ca = ChannelAttention::new("ca", 4, cfg);
            let sa = SpatialAttention::new("sa", cfg);
            let mut p = ModelParams::new();
            ca.declare(&mut p, 0)?;
            sa.declare(&mut p, 0)?;
            Ok(block_case(p, rng, s(2, 4, 8, 8), s(2, 4, 8, 8), move |t, p, x| {
                let y = ca.forward(t, p, x)?;
                sa.forward(t, p, y)
            }))
        }),
        ("pyramid_pooling", |rng, _| {
            let pp = PyramidPooling::new("pp", 4, PyramidConfig::default());
            let mut p = ModelParams::new();
            pp.declare(&mut p, 0)?;
            Ok(block_case(p, rng, s(2, 4, 8, 8), s(2, 4, 8, 8), move |t, p, x| {
                pp.forward(t, p, x)
            }))
        }),
        ("iim_full", |rng, _| iim_case(rng, Variant::Full)),
        ("iim_no_attn", |rng, _| iim_case(rng, Variant::IimNoAttn)),
        ("regression_header", |rng, _| {
            let head = RegressionHeader::new("head", 8);
            let mut p = ModelParams::new();
            head.declare(&mut p, 0)?;
            // Positive final bias keeps the trailing relu away from its kink.
            let mut c = block_case(p, rng, s(2, 8, 2, 2), s(2, 1, 8, 8), move |t, p, x| {
                head.forward(t, p, x)
            });
            c.params.set_value("head.conv3.bias", Tensor4::scalar(0.5))?;
            Ok(c)
        }),
        ("bayesian_loss", |rng, _| loss_case(rng, true, Background::Auto)),
        ("bayesian_loss_no_background", |rng, _| {
            loss_case(rng, true, Background::Off)
        }),
        ("mse_loss", |rng, _| loss_case(rng, false, Background::Off)),
    ]
}

fn iim_case(rng: &mut ChaCha8Rng, variant: Variant) -> Result<Case> {
    let iim = Iim::new("iim", 4, &PyramidConfig::default(), AttentionConfig::default(), variant);
    let mut p = ModelParams::new();
    iim.declare(&mut p, 0.0, 0)?;
    randomize(&mut p, rng, 0.5);
    for name in ["f_t", "f_rgb", "f_c"] {
        p.insert(name, uniform(rng, s(2, 4, 8, 8), -1.0, 1.0))?;
    }
    let r = uniform(rng, s(2, 4, 8, 8), -1.0, 1.0);
    Ok(case(
        p,
        Box::new(move |t, p| {
            let f_t = t.param(p, "f_t")?;
            let f_rgb = t.param(p, "f_rgb")?;
            let f_c = t.param(p, "f_c")?;
            let y = iim.forward(t, p, f_t, f_rgb, f_c, false)?;
            project(t, y, &r)
        }),
    ))
}

fn loss_case(rng: &mut ChaCha8Rng, bayesian: bool, background: Background) -> Result<Case> {
    let mut p = ModelParams::new();
    p.insert("density", uniform(rng, s(2, 1, 8, 8), 0.0, 0.1))?;
    let points: Vec<Vec<Point>> = (0..2)
        .map(|_| {
            (0..2)
                .map(|_| Point {
                    x: rng.gen_range(0.0..64.0),
                    y: rng.gen_range(0.0..64.0),
                })
                .collect()
        })
        .collect();
    let cfg = BayesianLossConfig {
        background,
        ..BayesianLossConfig::default()
    };
    Ok(case(
        p,
        Box::new(move |t, p| {
            let m = t.param(p, "density")?;
            if bayesian {
                bayesian_loss(t, m, &points, (64, 64), &cfg)
            } else {
                mse_loss(t, m, &points, cfg.sigma)
            }
        }),
    ))
}

/// Whole network plus Bayesian loss on one `1 x . x H x W` pair, probing two
/// coordinates in each of a random 10% of the parameter tensors.
fn end_to_end_case(rng: &mut ChaCha8Rng, opts: &SuiteOptions, seed: u64) -> Result<Case> {
    let model = build_tafnet(opts.model.clone(), seed)?;
    let (h, w) = (opts.model.input_height, opts.model.input_width);
    let rgb = uniform(rng, s(1, 3, h, w), -1.5, 1.5);
    let thermal = uniform(rng, s(1, 1, h, w), -1.5, 1.5);
    let points: Vec<Point> = (0..rng.gen_range(2..8))
        .map(|_| Point {
            x: rng.gen_range(0.0..w as f64),
            y: rng.gen_range(0.0..h as f64),
        })
        .collect();
    let loss = opts.loss;
    let params = model.params.clone();
    let arch = model.arch;
    Ok(Case {
        params,
        f: Box::new(move |t, p| {
            let out = arch.forward(t, p, &rgb, &thermal, ForwardOptions::default())?;
            bayesian_loss(t, out.density, std::slice::from_ref(&points), (h, w), &loss)
        }),
        opts: GradCheckOptions {
            param_fraction: 0.1,
            coords_per_param: Some(2),
            ..GradCheckOptions::default()
        },
    })
}

fn run_check(
    name: &'static str,
    tolerance: f64,
    seeds: usize,
    exec: Exec,
    mut build: impl FnMut(&mut ChaCha8Rng, u64) -> Result<Case>,
) -> Result<CheckResult> {
    let mut result = CheckResult {
        name,
        tolerance,
        max_rel_error: 0.0,
        probes: 0,
        skipped: 0,
        worst: None,
    };
    for seed in 0..seeds as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::params::fnv1a(name.as_bytes()));
        let c = build(&mut rng, seed)?;
        let opts = GradCheckOptions { seed, exec, ..c.opts };
        let report = grad_check(&c.params, c.f, &opts)?;
        result.probes += report.probes;
        result.skipped += report.skipped;
        if result.worst.is_none() || report.max_rel_error > result.max_rel_error {
            result.max_rel_error = report.max_rel_error;
            result.worst = report.worst;
        }
    }
    Ok(result)
}

/// Runs every check over `opts.seeds` seeds.
pub fn run_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    run_suite_with(opts, |_| {})
}

/// [`run_suite`] with a callback after each check.
pub fn run_suite_with(opts: &SuiteOptions, mut on_check: impl FnMut(&CheckResult)) -> Result<SuiteReport> {
    let mut checks = Vec::new();
    let groups = [(op_checks(), OP_TOLERANCE), (block_checks(), BLOCK_TOLERANCE)];
    for (list, tol) in groups {
        for (name, build) in list {
            let r = run_check(name, tol, opts.seeds, opts.exec, |rng, _| build(rng, opts))?;
            on_check(&r);
            checks.push(r);
        }
    }
    let r = run_check(
        "end_to_end",
        END_TO_END_TOLERANCE,
        opts.seeds,
        opts.exec,
        |rng, seed| end_to_end_case(rng, opts, seed),
    )?;
    on_check(&r);
    checks.push(r);
    Ok(SuiteReport { checks })
}
