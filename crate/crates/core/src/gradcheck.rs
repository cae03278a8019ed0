//! Central-difference verification of analytic gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::params::{ModelParams, ParamId};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Fraction of parameter tensors to probe (at least one is always probed).
    pub param_fraction: f64,
    /// Coordinates probed per selected tensor; `None` probes every coordinate.
    pub coords_per_param: Option<usize>,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            param_fraction: 1.0,
            coords_per_param: None,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Probe>,
    pub probes: usize,
    /// Probes whose `±eps` evaluations took a different relu, max or
    /// absolute-value branch than the probe point. A central difference
    /// across a kink measures no derivative, so these are not compared.
    pub skipped: usize,
}

/// Denominator floor of [`relative_error`]. A central difference with eps
/// 1e-5 carries about 1e-9 of round-off on unit-scale losses, so smaller
/// gradients are compared in absolute terms instead.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// `|a - n| / max(REL_ERROR_FLOOR, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Loss value and branch signature.
fn eval_loss<F>(f: &F, params: &ModelParams) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape, &ModelParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(Error::invalid("grad_check", format!("loss shape {}", v.shape())));
    }
    Ok((v.data()[0], tape.branch_signature()))
}

/// Analytic gradients of `f` at `params`, one dense buffer per parameter.
pub fn analytic_gradients<F>(params: &ModelParams, f: &F) -> Result<(f64, Vec<Vec<f64>>)>
where
    F: Fn(&mut Tape, &ModelParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    let mut out: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
    for (id, g) in grads.param_grads(&tape) {
        out[id.index()].copy_from_slice(g);
    }
    Ok((value, out))
}

/// Compares analytic gradients of the scalar computation `f` against central
/// differences on a sample of parameter coordinates.
pub fn grad_check<F>(params: &ModelParams, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ModelParams) -> Result<Var> + Sync + Send,
{
    let (loss, analytic) = analytic_gradients(params, &f)?;
    let (_, branches) = eval_loss(&f, params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "loss at probe point".into(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let total = params.len();
    let take = ((total as f64 * opts.param_fraction).ceil() as usize).clamp(1, total.max(1));
    let mut selected: Vec<usize> = index::sample(&mut rng, total, take).into_vec();
    selected.sort_unstable();

    let mut coords: Vec<(ParamId, usize)> = Vec::new();
    for pi in selected {
        let id = ParamId(pi);
        let len = params.by_id(id).value.len();
        match opts.coords_per_param {
            Some(k) if k < len => {
                let mut idx = index::sample(&mut rng, len, k).into_vec();
                idx.sort_unstable();
                coords.extend(idx.into_iter().map(|i| (id, i)));
            }
            _ => coords.extend((0..len).map(|i| (id, i))),
        }
    }

    let results = opts.exec.map(&coords, |&(id, i)| -> Result<Option<Probe>> {
        let name = &params.by_id(id).name;
        let base = params.by_id(id).value.data()[i];
        let shifted = |x: f64| -> Result<(f64, u64)> {
            let mut p = params.clone();
            p.by_id_mut(id).value.data_mut()[i] = x;
            let (v, b) = eval_loss(&f, &p)?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("loss while perturbing `{name}`[{i}]"),
                });
            }
            Ok((v, b))
        };
        let (hi, lo) = (base + opts.eps, base - opts.eps);
        let ((f_hi, b_hi), (f_lo, b_lo)) = (shifted(hi)?, shifted(lo)?);
        if b_hi != branches || b_lo != branches {
            return Ok(None);
        }
        let numeric = (f_hi - f_lo) / (hi - lo);
        let a = analytic[id.index()][i];
        Ok(Some(Probe {
            param: name.clone(),
            index: i,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        }))
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        probes: 0,
        skipped: 0,
    };
    for r in results {
        let Some(probe) = r? else {
            report.skipped += 1;
            continue;
        };
        report.probes += 1;
        if report.worst.is_none() || probe.rel_error > report.max_rel_error {
            report.max_rel_error = probe.rel_error;
            report.worst = Some(probe);
        }
    }
    Ok(report)
}
