//! Per-channel standardization constants.
//!
//! Stored next to the dataset as `normalization.txt`:
//!
//! ```text
//! # channel mean std
//! r <mean> <std>
//! g <mean> <std>
//! b <mean> <std>
//! thermal <mean> <std>
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::ExactSum;
use crate::tensor::Tensor4;

use super::ScenePair;

pub const NORMALIZATION_FILE: &str = "normalization.txt";
const CHANNELS: [&str; 4] = ["r", "g", "b", "thermal"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    /// Channels r, g, b, thermal.
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

impl Normalization {
    /// Population mean and standard deviation of every channel over `pairs`.
    pub fn compute(pairs: &[ScenePair]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("normalization", "no images"));
        }
        let channel = |k: usize| -> Box<dyn Fn(&ScenePair) -> &[f64]> {
            if k < 3 {
                Box::new(move |p| p.rgb.plane(0, k))
            } else {
                Box::new(|p| p.thermal.plane(0, 0))
            }
        };
        let mut mean = [0.0; 4];
        let mut std = [0.0; 4];
        for k in 0..4 {
            let get = channel(k);
            let count: usize = pairs.iter().map(|p| get(p).len()).sum();
            let sum: ExactSum = pairs.iter().flat_map(|p| get(p).iter().copied()).collect();
            let mu = sum.value() / count as f64;
            let sq: ExactSum = pairs
                .iter()
                .flat_map(|p| get(p).iter().map(|v| (v - mu) * (v - mu)))
                .collect();
            mean[k] = mu;
            // A constant channel would divide by zero; leave it unscaled.
            let sd = (sq.value() / count as f64).sqrt();
            std[k] = if sd > 0.0 { sd } else { 1.0 };
        }
        Ok(Normalization { mean, std })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# channel mean std\n");
        for (k, name) in CHANNELS.iter().enumerate() {
            s.push_str(&format!("{name} {} {}\n", self.mean[k], self.std[k]));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut mean = [f64::NAN; 4];
        let mut std = [f64::NAN; 4];
        let err = |line: usize, reason: String| Error::Record {
            path: path.to_path_buf(),
            line,
            reason,
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [name, m, s] = parts[..] else {
                return Err(err(i + 1, format!("expected `channel mean std`, got `{line}`")));
            };
            let k = CHANNELS
                .iter()
                .position(|c| *c == name)
                .ok_or_else(|| err(i + 1, format!("unknown channel `{name}`")))?;
            let m: f64 = m.parse().map_err(|e| err(i + 1, format!("bad mean: {e}")))?;
            let s: f64 = s.parse().map_err(|e| err(i + 1, format!("bad std: {e}")))?;
            if !m.is_finite() || !(s > 0.0 && s.is_finite()) {
                return Err(err(i + 1, "mean must be finite and std positive".into()));
            }
            if !mean[k].is_nan() {
                return Err(err(i + 1, format!("duplicate channel `{name}`")));
            }
            mean[k] = m;
            std[k] = s;
        }
        if let Some(k) = mean.iter().position(|m| m.is_nan()) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("missing channel `{}`", CHANNELS[k]),
            });
        }
        Ok(Normalization { mean, std })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn apply(&self, x: &Tensor4, offset: usize, forward: bool) -> Tensor4 {
        let s = x.shape();
        let mut out = x.clone();
        let plane = s.plane();
        for (i, chunk) in out.data_mut().chunks_exact_mut(plane).enumerate() {
            let k = offset + i % s.c;
            let (m, sd) = (self.mean[k], self.std[k]);
            for v in chunk {
                *v = if forward { (*v - m) / sd } else { *v * sd + m };
            }
        }
        out
    }

    /// Model-ready `(rgb, thermal)` tensors for one pair.
    pub fn normalize(&self, pair: &ScenePair) -> (Tensor4, Tensor4) {
        (self.normalize_rgb(&pair.rgb), self.normalize_thermal(&pair.thermal))
    }

    pub fn normalize_rgb(&self, rgb: &Tensor4) -> Tensor4 {
        self.apply(rgb, 0, true)
    }

    pub fn normalize_thermal(&self, thermal: &Tensor4) -> Tensor4 {
        self.apply(thermal, 3, true)
    }

    pub fn denormalize_rgb(&self, rgb: &Tensor4) -> Tensor4 {
        self.apply(rgb, 0, false)
    }

    pub fn denormalize_thermal(&self, thermal: &Tensor4) -> Tensor4 {
        self.apply(thermal, 3, false)
    }
}
