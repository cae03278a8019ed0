//! Paired RGB/thermal scenes with head-point annotations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor4;

mod io;
mod normalize;
mod synth;

pub use io::{read_dataset, read_pgm, read_ppm, read_split, write_dataset, write_pgm, write_ppm, write_split, SPLITS};
pub use normalize::{Normalization, NORMALIZATION_FILE};
pub use synth::{
    generate_dataset, generate_scene, generate_scene_with_layout, generate_split, scene_rng, Blob, SceneLayout,
    SynthConfig,
};

/// Head position in pixels of the image it annotates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Illumination {
    Bright,
    Dark,
}

impl Illumination {
    pub fn as_str(self) -> &'static str {
        match self {
            Illumination::Bright => "bright",
            Illumination::Dark => "dark",
        }
    }
}

impl fmt::Display for Illumination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Illumination {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bright" => Ok(Illumination::Bright),
            "dark" => Ok(Illumination::Dark),
            _ => Err(format!("unknown illumination `{s}`")),
        }
    }
}

/// One sample. Images are `(1, 3, H, W)` and `(1, 1, H, W)` with values in
/// `[0, 1]`; points are in the RGB frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub id: String,
    pub rgb: Tensor4,
    pub thermal: Tensor4,
    pub points: Vec<Point>,
    pub illumination: Illumination,
}

impl ScenePair {
    pub fn height(&self) -> usize {
        self.rgb.shape().h
    }

    pub fn width(&self) -> usize {
        self.rgb.shape().w
    }
}

/// The three splits of a dataset directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<ScenePair>,
    pub val: Vec<ScenePair>,
    pub test: Vec<ScenePair>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[ScenePair]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}
