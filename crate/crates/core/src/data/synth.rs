//! Synthetic paired scenes.
//!
//! People are radial-falloff disks. In bright scenes they stand out in RGB
//! while the thermal image is low-contrast and cluttered by warm background
//! patches; in dark scenes RGB is dim and barely separable from noise while
//! thermal shows people clearly. Each thermal blob is displaced from its RGB
//! position by an independent uniform jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kv::KvText;
use crate::par::Exec;
use crate::params::fnv1a;
use crate::tensor::{Shape, Tensor4};

use super::{Dataset, Illumination, Point, ScenePair};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub image_height: usize,
    pub image_width: usize,
    /// Inclusive range of people per scene.
    pub count_min: usize,
    pub count_max: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub bright_fraction: f64,
    /// Person contrast in units of `noise_std`. Each modality is near
    /// invisible in its bad illumination.
    pub rgb_snr_bright: f64,
    pub rgb_snr_dark: f64,
    pub thermal_snr_bright: f64,
    pub thermal_snr_dark: f64,
    pub noise_std: f64,
    pub misalignment_max: f64,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_height: 64,
            image_width: 64,
            count_min: 3,
            count_max: 30,
            radius_min: 2.0,
            radius_max: 3.5,
            bright_fraction: 0.5,
            rgb_snr_bright: 10.0,
            rgb_snr_dark: 0.25,
            thermal_snr_bright: 0.25,
            thermal_snr_dark: 10.0,
            noise_std: 0.04,
            misalignment_max: 2.0,
            seed: 0,
            train_size: 200,
            val_size: 40,
            test_size: 160,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("image_height", self.image_height), ("image_width", self.image_width)] {
            if v == 0 || v % 32 != 0 {
                return Err(Error::config(field, format!("{v} is not a positive multiple of 32")));
            }
        }
        if self.count_min > self.count_max {
            return Err(Error::config("count_min", "exceeds count_max"));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max && self.radius_max.is_finite()) {
            return Err(Error::config("radius_min", "need 0 < radius_min <= radius_max"));
        }
        if !(0.0..=1.0).contains(&self.bright_fraction) {
            return Err(Error::config("bright_fraction", "must lie in [0, 1]"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", "must be finite and non-negative"));
        }
        for (field, v) in [
            ("rgb_snr_bright", self.rgb_snr_bright),
            ("rgb_snr_dark", self.rgb_snr_dark),
            ("thermal_snr_bright", self.thermal_snr_bright),
            ("thermal_snr_dark", self.thermal_snr_dark),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        if self.rgb_snr_bright <= self.rgb_snr_dark {
            return Err(Error::config("rgb_snr_bright", "must exceed rgb_snr_dark"));
        }
        if self.thermal_snr_dark <= self.thermal_snr_bright {
            return Err(Error::config("thermal_snr_dark", "must exceed thermal_snr_bright"));
        }
        if !(self.misalignment_max >= 0.0 && self.misalignment_max.is_finite()) {
            return Err(Error::config("misalignment_max", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn parse(text: &str, source: &std::path::Path) -> Result<Self> {
        let mut kv = KvText::parse(text, source)?;
        let d = SynthConfig::default();
        let cfg = SynthConfig {
            image_height: kv.take_or("image_height", d.image_height)?,
            image_width: kv.take_or("image_width", d.image_width)?,
            count_min: kv.take_or("count_min", d.count_min)?,
            count_max: kv.take_or("count_max", d.count_max)?,
            radius_min: kv.take_or("radius_min", d.radius_min)?,
            radius_max: kv.take_or("radius_max", d.radius_max)?,
            bright_fraction: kv.take_or("bright_fraction", d.bright_fraction)?,
            rgb_snr_bright: kv.take_or("rgb_snr_bright", d.rgb_snr_bright)?,
            rgb_snr_dark: kv.take_or("rgb_snr_dark", d.rgb_snr_dark)?,
            thermal_snr_bright: kv.take_or("thermal_snr_bright", d.thermal_snr_bright)?,
            thermal_snr_dark: kv.take_or("thermal_snr_dark", d.thermal_snr_dark)?,
            noise_std: kv.take_or("noise_std", d.noise_std)?,
            misalignment_max: kv.take_or("misalignment_max", d.misalignment_max)?,
            seed: kv.take_or("seed", d.seed)?,
            train_size: kv.take_or("train_size", d.train_size)?,
            val_size: kv.take_or("val_size", d.val_size)?,
            test_size: kv.take_or("test_size", d.test_size)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Ground truth behind a generated scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub center: Point,
    pub thermal_center: Point,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayout {
    pub illumination: Illumination,
    pub blobs: Vec<Blob>,
}

/// Independent stream for scene `index` of `split`.
pub fn scene_rng(seed: u64, split: &str, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(split.as_bytes()));
    rng.set_stream(index as u64);
    rng
}

/// Low-frequency texture in roughly `[-1, 1]`.
struct Texture([(f64, f64, f64); 3]);

impl Texture {
    fn sample(rng: &mut impl Rng) -> Self {
        Texture(std::array::from_fn(|_| {
            let period = rng.gen_range(16.0..64.0);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / period;
            (
                k * angle.cos(),
                k * angle.sin(),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        }))
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.0
            .iter()
            .map(|&(fx, fy, ph)| (fx * x + fy * y + ph).sin())
            .sum::<f64>()
            / 3.0
    }
}

/// Adds `amplitude * (1 - (d/r)^2)_+` around `c` to a single-channel plane.
fn splat(plane: &mut [f64], h: usize, w: usize, c: Point, r: f64, amplitude: f64) {
    let y0 = (c.y - r).floor().max(0.0) as usize;
    let x0 = (c.x - r).floor().max(0.0) as usize;
    let y1 = ((c.y + r).ceil().max(0.0) as usize).min(h);
    let x1 = ((c.x + r).ceil().max(0.0) as usize).min(w);
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - c.x;
            let dy = y as f64 + 0.5 - c.y;
            let f = 1.0 - (dx * dx + dy * dy) / (r * r);
            if f > 0.0 {
                plane[y * w + x] += amplitude * f;
            }
        }
    }
}

pub fn generate_scene(rng: &mut impl Rng, cfg: &SynthConfig, id: impl Into<String>) -> ScenePair {
    generate_scene_with_layout(rng, cfg, id).0
}

pub fn generate_scene_with_layout(
    rng: &mut impl Rng,
    cfg: &SynthConfig,
    id: impl Into<String>,
) -> (ScenePair, SceneLayout) {
    let (h, w) = (cfg.image_height, cfg.image_width);
    let bright = rng.gen_bool(cfg.bright_fraction);
    let illumination = if bright {
        Illumination::Bright
    } else {
        Illumination::Dark
    };
    let count = rng.gen_range(cfg.count_min..=cfg.count_max);
    let m = cfg.misalignment_max;
    let blobs: Vec<Blob> = (0..count)
        .map(|_| {
            let center = Point {
                x: rng.gen_range(0.0..w as f64),
                y: rng.gen_range(0.0..h as f64),
            };
            let radius = if cfg.radius_min < cfg.radius_max {
                rng.gen_range(cfg.radius_min..cfg.radius_max)
            } else {
                cfg.radius_min
            };
            let (jx, jy) = if m > 0.0 {
                (rng.gen_range(-m..=m), rng.gen_range(-m..=m))
            } else {
                (0.0, 0.0)
            };
            Blob {
                center,
                thermal_center: Point {
                    x: center.x + jx,
                    y: center.y + jy,
                },
                radius,
            }
        })
        .collect();

    let (rgb_snr, t_snr) = if bright {
        (cfg.rgb_snr_bright, cfg.thermal_snr_bright)
    } else {
        (cfg.rgb_snr_dark, cfg.thermal_snr_dark)
    };
    let plane = h * w;

    // Person masks: one in the RGB frame, one in the thermal frame.
    let mut mask = vec![0.0; plane];
    let mut t_mask = vec![0.0; plane];
    for b in &blobs {
        splat(&mut mask, h, w, b.center, b.radius, 1.0);
        splat(&mut t_mask, h, w, b.thermal_center, b.radius, 1.0);
    }
    mask.iter_mut().chain(t_mask.iter_mut()).for_each(|v| *v = v.min(1.0));

    let level = if bright { 0.55 } else { 0.1 };
    let texture_amp = if bright { 0.12 } else { 0.03 };
    let person_shade: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.6..1.0));
    let rgb_contrast = rgb_snr * cfg.noise_std;
    let mut rgb = vec![0.0; 3 * plane];
    for (k, chan) in rgb.chunks_exact_mut(plane).enumerate() {
        let tex = Texture::sample(rng);
        for (i, v) in chan.iter_mut().enumerate() {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            *v = level + texture_amp * tex.at(x, y) - rgb_contrast * person_shade[k] * mask[i];
        }
    }

    // Sun-heated clutter in bright scenes; a nearly flat cool background at night.
    let t_clutter = if bright { 0.15 } else { 0.02 };
    let t_tex = Texture::sample(rng);
    let t_contrast = t_snr * cfg.noise_std;
    let mut thermal: Vec<f64> = (0..plane)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            0.3 + t_clutter * t_tex.at(x, y) + t_contrast * t_mask[i]
        })
        .collect();

    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_std).expect("finite std");
        for v in rgb.iter_mut().chain(thermal.iter_mut()) {
            *v += noise.sample(rng);
        }
    }
    for v in rgb.iter_mut().chain(thermal.iter_mut()) {
        *v = v.clamp(0.0, 1.0);
    }

    let pair = ScenePair {
        id: id.into(),
        rgb: Tensor4::from_parts(Shape::new(1, 3, h, w), rgb),
        thermal: Tensor4::from_parts(Shape::new(1, 1, h, w), thermal),
        points: blobs.iter().map(|b| b.center).collect(),
        illumination,
    };
    (pair, SceneLayout { illumination, blobs })
}

/// Scenes `0..count` of `split`, ids `<split>_<index>`. Each scene draws from
/// its own stream, so the result does not depend on `exec`.
pub fn generate_split(cfg: &SynthConfig, split: &str, count: usize, exec: Exec) -> Vec<ScenePair> {
    exec.map_range(count, |i| {
        let mut rng = scene_rng(cfg.seed, split, i);
        generate_scene(&mut rng, cfg, format!("{split}_{i:04}"))
    })
}

pub fn generate_dataset(cfg: &SynthConfig, exec: Exec) -> Result<Dataset> {
    cfg.validate()?;
    Ok(Dataset {
        train: generate_split(cfg, "train", cfg.train_size, exec),
        val: generate_split(cfg, "val", cfg.val_size, exec),
        test: generate_split(cfg, "test", cfg.test_size, exec),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_count_range_gives_background_only() {
        let cfg = SynthConfig {
            count_min: 0,
            count_max: 0,
            ..SynthConfig::default()
        };
        let p = generate_scene(&mut scene_rng(1, "train", 0), &cfg, "a");
        assert!(p.points.is_empty());
        assert_eq!(p.rgb.shape(), Shape::new(1, 3, 64, 64));
        assert_eq!(p.thermal.shape(), Shape::new(1, 1, 64, 64));
    }

    #[test]
    fn same_seed_same_scene() {
        let cfg = SynthConfig::default();
        let a = generate_scene(&mut scene_rng(5, "val", 3), &cfg, "x");
        let b = generate_scene(&mut scene_rng(5, "val", 3), &cfg, "x");
        assert_eq!(a, b);
        let c = generate_scene(&mut scene_rng(5, "val", 4), &cfg, "x");
        assert_ne!(a, c);
    }

    #[test]
    fn split_is_independent_of_exec() {
        let cfg = SynthConfig {
            image_height: 32,
            image_width: 32,
            ..SynthConfig::default()
        };
        assert_eq!(
            generate_split(&cfg, "train", 6, Exec::Sequential),
            generate_split(&cfg, "train", 6, Exec::Parallel)
        );
    }

    #[test]
    fn layout_respects_bounds_and_jitter() {
        let cfg = SynthConfig::default();
        for i in 0..50 {
            let (p, layout) = generate_scene_with_layout(&mut scene_rng(9, "t", i), &cfg, "s");
            assert_eq!(p.points.len(), layout.blobs.len());
            assert!((cfg.count_min..=cfg.count_max).contains(&p.points.len()));
            for b in &layout.blobs {
                assert!(b.center.x >= 0.0 && b.center.x < 64.0 && b.center.y >= 0.0 && b.center.y < 64.0);
                assert!((b.thermal_center.x - b.center.x).abs() <= cfg.misalignment_max);
                assert!((b.thermal_center.y - b.center.y).abs() <= cfg.misalignment_max);
            }
            assert!(p
                .rgb
                .data()
                .iter()
                .chain(p.thermal.data())
                .all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rejects_inverted_contrasts() {
        let cfg = SynthConfig {
            thermal_snr_bright: 20.0,
            ..SynthConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("thermal_snr_dark"));
    }
}
