//! Counting metrics: grid average mean absolute error, MAE and RMSE.
//!
//! Sums are accumulated exactly (non-overlapping partials) and rounded once,
//! so GAME(0) and MAE are the same floating-point number and GAME is
//! monotone in the grid level despite rounding.

use std::fmt::{self, Write as _};

use crate::data::{Illumination, Point};
use crate::error::{Error, Result};
use crate::ops::pool::bin_bounds;

pub const MAX_LEVEL: usize = 3;

/// Exact running sum of `f64` values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
    /// Set once a non-finite value is added; the sum is then a plain sum.
    overflow: Option<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        if let Some(s) = &mut self.overflow {
            *s += x;
            return;
        }
        if !x.is_finite() {
            self.overflow = Some(self.partials.iter().sum::<f64>() + x);
            return;
        }
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        if !x.is_finite() {
            self.overflow = Some(x);
            return;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        match other.overflow {
            Some(s) => self.add(s),
            None => other.partials.iter().for_each(|&p| self.add(p)),
        }
    }

    pub fn negate(&mut self) {
        self.partials.iter_mut().for_each(|p| *p = -*p);
        if let Some(s) = &mut self.overflow {
            *s = -*s;
        }
    }

    /// Exact absolute value: the rounded sum carries the sign of the exact one.
    pub fn abs(mut self) -> Self {
        if self.value() < 0.0 {
            self.negate();
        }
        self
    }

    /// The correctly rounded value of the sum.
    pub fn value(&self) -> f64 {
        if let Some(s) = self.overflow {
            return s;
        }
        let p = &self.partials;
        let Some(mut n) = p.len().checked_sub(1) else {
            return 0.0;
        };
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            lo = y - (hi - x);
            if lo != 0.0 {
                break;
            }
        }
        // Half-way case: the remaining partials decide the direction.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::new();
        iter.into_iter().for_each(|x| s.add(x));
        s
    }
}

/// Correctly rounded sum.
pub fn exact_sum(values: &[f64]) -> f64 {
    values.iter().copied().collect::<ExactSum>().value()
}

/// Index of the grid cell containing coordinate `v` along an axis of `len`
/// map cells split into `parts`. A point on a boundary belongs to the cell
/// that starts there.
pub fn cell_index(v: f64, len: usize, parts: usize) -> usize {
    (1..parts)
        .rev()
        .find(|&i| v >= bin_bounds(len, parts, i).0 as f64)
        .unwrap_or(0)
}

/// Scores of one image: predicted and true counts, and for each grid level
/// the exact value of `sum_j |P_j - G_j|`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub pred: f64,
    pub gt: usize,
    /// Exact `|sum(map) - gt|`.
    error: ExactSum,
    cells: Vec<ExactSum>,
}

impl ImageScore {
    /// `map` is an `h x w` row-major density map; `points` are in map units
    /// (cell `(i, j)` spans `[j, j+1) x [i, i+1)`).
    pub fn new(map: &[f64], h: usize, w: usize, points: &[Point], max_level: usize) -> Result<Self> {
        if map.len() != h * w || h == 0 || w == 0 {
            return Err(Error::invalid(
                "game",
                format!("map of {} values is not {h}x{w}", map.len()),
            ));
        }
        if max_level > MAX_LEVEL {
            return Err(Error::invalid(
                "game",
                format!("level {max_level} outside 0..={MAX_LEVEL}"),
            ));
        }
        if let Some(p) = points
            .iter()
            .find(|p| !(p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64))
        {
            return Err(Error::invalid(
                "game",
                format!("point ({}, {}) outside {h}x{w} map", p.x, p.y),
            ));
        }
        let cells = (0..=max_level)
            .map(|l| {
                let g = 1usize << l;
                let mut mass = vec![ExactSum::new(); g * g];
                for r in 0..h {
                    let ci = cell_index(r as f64, h, g);
                    for c in 0..w {
                        mass[ci * g + cell_index(c as f64, w, g)].add(map[r * w + c]);
                    }
                }
                for p in points {
                    mass[cell_index(p.y, h, g) * g + cell_index(p.x, w, g)].add(-1.0);
                }
                let mut total = ExactSum::new();
                for m in mass {
                    total.merge(&m.abs());
                }
                total
            })
            .collect();
        let mut error: ExactSum = map.iter().copied().collect();
        error.add(-(points.len() as f64));
        Ok(ImageScore {
            pred: exact_sum(map),
            gt: points.len(),
            error: error.abs(),
            cells,
        })
    }

    pub fn max_level(&self) -> usize {
        self.cells.len() - 1
    }

    /// Exact absolute count error.
    pub fn count_error(&self) -> &ExactSum {
        &self.error
    }

    /// Exact `sum_j |P_j - G_j|` at level `l`.
    pub fn cell_error(&self, l: usize) -> &ExactSum {
        &self.cells[l]
    }
}

fn check_level(l: usize) -> Result<()> {
    if l > MAX_LEVEL {
        return Err(Error::invalid("game", format!("level {l} outside 0..={MAX_LEVEL}")));
    }
    Ok(())
}

/// GAME(l) over scored images.
pub fn game_of(scores: &[&ImageScore], l: usize) -> Result<f64> {
    check_level(l)?;
    if scores.is_empty() {
        return Err(Error::invalid("game", "no images"));
    }
    let mut total = ExactSum::new();
    for s in scores {
        if l > s.max_level() {
            return Err(Error::invalid(
                "game",
                format!("image scored only up to level {}", s.max_level()),
            ));
        }
        total.merge(s.cell_error(l));
    }
    Ok(total.value() / scores.len() as f64)
}

/// GAME(l) of single-channel density maps against point annotations given in
/// map units.
pub fn game(maps: &[crate::Tensor4], points: &[Vec<Point>], l: usize) -> Result<f64> {
    check_level(l)?;
    if maps.len() != points.len() {
        return Err(Error::invalid(
            "game",
            format!("{} maps but {} annotation lists", maps.len(), points.len()),
        ));
    }
    let scores = maps
        .iter()
        .zip(points)
        .map(|(m, p)| {
            let s = m.shape();
            if s.n != 1 || s.c != 1 {
                return Err(Error::invalid("game", format!("expected a 1x1xHxW map, got {s}")));
            }
            ImageScore::new(m.data(), s.h, s.w, p, l)
        })
        .collect::<Result<Vec<_>>>()?;
    game_of(&scores.iter().collect::<Vec<_>>(), l)
}

fn check_pairs(op: &'static str, preds: &[f64], gts: &[f64]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(
            op,
            format!("{} predictions, {} ground truths", preds.len(), gts.len()),
        ));
    }
    if preds.is_empty() {
        return Err(Error::invalid(op, "empty lists"));
    }
    Ok(())
}

fn abs_error(p: f64, g: f64) -> ExactSum {
    [p, -g].into_iter().collect::<ExactSum>().abs()
}

pub fn mae(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check_pairs("mae", preds, gts)?;
    let mut total = ExactSum::new();
    for (&p, &g) in preds.iter().zip(gts) {
        total.merge(&abs_error(p, g));
    }
    Ok(total.value() / preds.len() as f64)
}

pub fn rmse(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check_pairs("rmse", preds, gts)?;
    let sq: ExactSum = preds
        .iter()
        .zip(gts)
        .map(|(&p, &g)| {
            let d = abs_error(p, g).value();
            d * d
        })
        .collect();
    Ok((sq.value() / preds.len() as f64).sqrt())
}

/// One evaluated image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageResult {
    pub id: String,
    pub illumination: Illumination,
    pub score: ImageScore,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitMetrics {
    pub images: usize,
    pub game: [f64; MAX_LEVEL + 1],
    pub mae: f64,
    pub rmse: f64,
}

impl SplitMetrics {
    pub fn of(images: &[&ImageResult]) -> Result<Option<Self>> {
        if images.is_empty() {
            return Ok(None);
        }
        let scores: Vec<&ImageScore> = images.iter().map(|r| &r.score).collect();
        let mut game = [0.0; MAX_LEVEL + 1];
        for (l, g) in game.iter_mut().enumerate() {
            *g = game_of(&scores, l)?;
        }
        // per-image errors come from the unrounded map sums, as GAME does
        let n = scores.len() as f64;
        let mut abs = ExactSum::new();
        let mut sq = ExactSum::new();
        for s in &scores {
            abs.merge(s.count_error());
            let d = s.count_error().value();
            sq.add(d * d);
        }
        Ok(Some(SplitMetrics {
            images: images.len(),
            game,
            mae: abs.value() / n,
            rmse: (sq.value() / n).sqrt(),
        }))
    }
}

/// Per-image counts and aggregate metrics, overall and per illumination.
/// A split without images of some illumination reports it as `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: Vec<ImageResult>,
    pub all: SplitMetrics,
    pub bright: Option<SplitMetrics>,
    pub dark: Option<SplitMetrics>,
}

impl EvalReport {
    pub fn new(images: Vec<ImageResult>) -> Result<Self> {
        let subset = |want: Option<Illumination>| -> Vec<&ImageResult> {
            images
                .iter()
                .filter(|r| want.is_none_or(|w| r.illumination == w))
                .collect()
        };
        let all = SplitMetrics::of(&subset(None))?.ok_or_else(|| Error::invalid("evaluate", "empty split"))?;
        let bright = SplitMetrics::of(&subset(Some(Illumination::Bright)))?;
        let dark = SplitMetrics::of(&subset(Some(Illumination::Dark)))?;
        Ok(EvalReport {
            images,
            all,
            bright,
            dark,
        })
    }

    pub fn split(&self, name: &str) -> Option<&SplitMetrics> {
        match name {
            "all" => Some(&self.all),
            "bright" => self.bright.as_ref(),
            "dark" => self.dark.as_ref(),
            _ => None,
        }
    }
}

/// Text form:
///
/// ```text
/// id<TAB>illumination<TAB>gt<TAB>pred
/// <one row per image, in evaluation order>
///
/// split<TAB>images<TAB>game0<TAB>game1<TAB>game2<TAB>game3<TAB>mae<TAB>rmse
/// all<TAB>...
/// bright<TAB>...        or  bright<TAB>absent
/// dark<TAB>...          or  dark<TAB>absent
/// ```
///
/// Reals use the shortest representation that parses back to the same value.
impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::from("id\tillumination\tgt\tpred\n");
        for r in &self.images {
            writeln!(s, "{}\t{}\t{}\t{}", r.id, r.illumination, r.score.gt, r.score.pred)?;
        }
        s.push_str("\nsplit\timages\tgame0\tgame1\tgame2\tgame3\tmae\trmse\n");
        for (name, m) in [
            ("all", Some(&self.all)),
            ("bright", self.bright.as_ref()),
            ("dark", self.dark.as_ref()),
        ] {
            match m {
                Some(m) => writeln!(
                    s,
                    "{name}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    m.images, m.game[0], m.game[1], m.game[2], m.game[3], m.mae, m.rmse
                )?,
                None => writeln!(s, "{name}\tabsent")?,
            }
        }
        f.write_str(&s)
    }
}
