//! Point-supervised training objectives.
//!
//! Annotations arrive in input pixels and are mapped onto the density map by
//! dividing by the output stride; map cell `(i, j)` has its center at
//! `(j + 0.5, i + 0.5)`.

use crate::data::Point;
use crate::error::{Error, Result};
use crate::tape::{CountTerm, Tape, Var};
use crate::tensor::{Shape, Tensor4};

/// Input pixels per density-map cell.
pub const OUTPUT_STRIDE: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Background {
    Off,
    /// Margin in input pixels.
    Margin(f64),
    /// `0.15 * min(H, W)` of the input image.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BayesianLossConfig {
    /// Gaussian width in input pixels.
    pub sigma: f64,
    pub background: Background,
}

impl Default for BayesianLossConfig {
    fn default() -> Self {
        BayesianLossConfig {
            sigma: 8.0,
            background: Background::Auto,
        }
    }
}

pub const AUTO_MARGIN_RATIO: f64 = 0.15;

impl BayesianLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(
                "bl_sigma",
                format!("must be positive, got {}", self.sigma),
            ));
        }
        if let Background::Margin(m) = self.background {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::config("bl_margin", format!("must be positive, got {m}")));
            }
        }
        Ok(())
    }

    /// Background margin in input pixels for an `h x w` input.
    pub fn margin(&self, h: usize, w: usize) -> Option<f64> {
        match self.background {
            Background::Off => None,
            Background::Margin(m) => Some(m),
            Background::Auto => Some(AUTO_MARGIN_RATIO * h.min(w) as f64),
        }
    }
}

fn to_map(p: &Point) -> (f64, f64) {
    (p.x / OUTPUT_STRIDE, p.y / OUTPUT_STRIDE)
}

fn dist2(a: (f64, f64), r: usize, c: usize) -> f64 {
    let dx = c as f64 + 0.5 - a.0;
    let dy = r as f64 + 0.5 - a.1;
    dx * dx + dy * dy
}

/// Posterior weights `p(y_k | x_m)` for every class `k` (annotations, then
/// the background when `margin` is given) over the cells of an `h x w` map.
/// `points`, `sigma` and `margin` are in map units.
pub fn posteriors(points: &[(f64, f64)], h: usize, w: usize, sigma: f64, margin: Option<f64>) -> Vec<Vec<f64>> {
    let classes = points.len() + margin.is_some() as usize;
    let mut out = vec![vec![0.0; h * w]; classes];
    let denom = 2.0 * sigma * sigma;
    let mut logits = vec![0.0; classes];
    for r in 0..h {
        for c in 0..w {
            let mut nearest = f64::INFINITY;
            for (k, &p) in points.iter().enumerate() {
                let d2 = dist2(p, r, c);
                nearest = nearest.min(d2);
                logits[k] = -d2 / denom;
            }
            if let Some(m) = margin {
                let d = (m - nearest.sqrt()).max(0.0);
                logits[points.len()] = -d * d / denom;
            }
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
            for (k, l) in logits.iter().enumerate() {
                out[k][r * w + c] = (l - top).exp() / z;
            }
        }
    }
    out
}

/// Count terms of the Bayesian loss for one map item.
pub fn bayesian_terms(
    item: usize,
    h: usize,
    w: usize,
    points: &[Point],
    margin: Option<f64>,
    sigma: f64,
) -> Vec<CountTerm> {
    if points.is_empty() {
        // Everything is background, or there is no class at all: the whole map
        // should be empty.
        return vec![CountTerm {
            item,
            weights: vec![1.0; h * w],
            target: 0.0,
        }];
    }
    let pts: Vec<(f64, f64)> = points.iter().map(to_map).collect();
    let post = posteriors(&pts, h, w, sigma / OUTPUT_STRIDE, margin.map(|m| m / OUTPUT_STRIDE));
    let n = points.len();
    post.into_iter()
        .enumerate()
        .map(|(k, weights)| CountTerm {
            item,
            weights,
            target: if k < n { 1.0 } else { 0.0 },
        })
        .collect()
}

/// Bayesian loss summed over the batch. `density` is `(n, 1, h, w)`,
/// `points[i]` are the annotations of item `i` in input pixels and
/// `input_hw` is the input image size.
pub fn bayesian_loss(
    tape: &mut Tape,
    density: Var,
    points: &[Vec<Point>],
    input_hw: (usize, usize),
    cfg: &BayesianLossConfig,
) -> Result<Var> {
    cfg.validate()?;
    let s = check_batch(tape.shape(density), points)?;
    let margin = cfg.margin(input_hw.0, input_hw.1);
    let terms = points
        .iter()
        .enumerate()
        .flat_map(|(i, p)| bayesian_terms(i, s.h, s.w, p, margin, cfg.sigma))
        .collect();
    tape.count_l1(density, terms)
}

fn check_batch(s: Shape, points: &[Vec<Point>]) -> Result<Shape> {
    if s.c != 1 || s.n != points.len() {
        return Err(Error::invalid(
            "loss",
            format!("density {s} does not match {} annotation lists", points.len()),
        ));
    }
    Ok(s)
}

/// Sum of per-point discrete Gaussians on an `h x w` map, each normalized to
/// unit mass. Points and `sigma` are in map units.
pub fn gaussian_density_gt(points: &[Point], h: usize, w: usize, sigma: f64) -> Result<Tensor4> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(
            "gaussian_density_gt",
            format!("sigma must be positive, got {sigma}"),
        ));
    }
    let mut map = vec![0.0; h * w];
    let denom = 2.0 * sigma * sigma;
    let mut g = vec![0.0; h * w];
    for p in points {
        let a = (p.x, p.y);
        let nearest = (0..h * w).map(|m| dist2(a, m / w, m % w)).fold(f64::INFINITY, f64::min);
        for (m, v) in g.iter_mut().enumerate() {
            *v = (-(dist2(a, m / w, m % w) - nearest) / denom).exp();
        }
        let z = crate::metrics::exact_sum(&g);
        map.iter_mut().zip(&g).for_each(|(o, v)| *o += v / z);
    }
    Ok(Tensor4::from_parts(Shape::new(1, 1, h, w), map))
}

/// Squared error against Gaussian ground-truth maps built from input-pixel
/// annotations.
pub fn mse_loss(tape: &mut Tape, density: Var, points: &[Vec<Point>], sigma: f64) -> Result<Var> {
    let s = check_batch(tape.shape(density), points)?;
    let maps = points
        .iter()
        .map(|p| {
            let mapped: Vec<Point> = p
                .iter()
                .map(|q| Point {
                    x: q.x / OUTPUT_STRIDE,
                    y: q.y / OUTPUT_STRIDE,
                })
                .collect();
            gaussian_density_gt(&mapped, s.h, s.w, sigma / OUTPUT_STRIDE)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.squared_error(density, Tensor4::stack(&maps)?)
}
