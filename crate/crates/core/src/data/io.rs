//! Dataset directories.
//!
//! ```text
//! <dir>/<split>/annotations.jsonl     one record per image, in order
//! <dir>/<split>/<id>.rgb.ppm          binary PPM (P6), 8-bit
//! <dir>/<split>/<id>.thermal.pgm      binary PGM (P5), 8-bit
//! ```
//!
//! Annotation record: `{"id":"train_0000","illumination":"bright","points":[[x,y],...]}`
//! with points in pixels of the RGB image.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor4};

use super::{Dataset, Illumination, Point, ScenePair};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const ANNOTATIONS: &str = "annotations.jsonl";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    illumination: Illumination,
    points: Vec<Point>,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_netpbm(path: &Path, magic: &str, img: &Tensor4, channels: usize) -> Result<()> {
    let s = img.shape();
    if s.n != 1 || s.c != channels {
        return Err(Error::invalid(
            "write image",
            format!("expected 1x{channels}xHxW, got {s}"),
        ));
    }
    let mut out = format!("{magic}\n{} {}\n255\n", s.w, s.h).into_bytes();
    let plane = s.plane();
    for i in 0..plane {
        for c in 0..channels {
            out.push(quantize(img.data()[c * plane + i]));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_ppm(path: &Path, rgb: &Tensor4) -> Result<()> {
    write_netpbm(path, "P6", rgb, 3)
}

pub fn write_pgm(path: &Path, gray: &Tensor4) -> Result<()> {
    write_netpbm(path, "P5", gray, 1)
}

fn read_netpbm(path: &Path, magic: &[u8], channels: usize) -> Result<Tensor4> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated header"));
        }
        fields.push(&bytes[start..pos]);
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != magic {
        return Err(format_err(
            path,
            format!("expected {} image", String::from_utf8_lossy(magic)),
        ));
    }
    let num = |f: &[u8], what: &str| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| format_err(path, format!("bad {what}")))
    };
    let (w, h, max) = (
        num(fields[1], "width")?,
        num(fields[2], "height")?,
        num(fields[3], "maxval")?,
    );
    if max != 255 {
        return Err(format_err(path, format!("maxval {max}, expected 255")));
    }
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != w * h * channels {
        return Err(format_err(
            path,
            format!("raster has {} bytes, expected {}", raster.len(), w * h * channels),
        ));
    }
    let plane = w * h;
    let mut data = vec![0.0; channels * plane];
    for (i, px) in raster.chunks_exact(channels).enumerate() {
        for (c, &b) in px.iter().enumerate() {
            data[c * plane + i] = b as f64 / 255.0;
        }
    }
    Ok(Tensor4::from_parts(Shape::new(1, channels, h, w), data))
}

pub fn read_ppm(path: &Path) -> Result<Tensor4> {
    read_netpbm(path, b"P6", 3)
}

pub fn read_pgm(path: &Path) -> Result<Tensor4> {
    read_netpbm(path, b"P5", 1)
}

fn image_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}.rgb.ppm")), dir.join(format!("{id}.thermal.pgm")))
}

pub fn write_split(dir: &Path, split: &str, pairs: &[ScenePair]) -> Result<()> {
    let dir = dir.join(split);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut lines = String::new();
    for p in pairs {
        let (rgb, thermal) = image_paths(&dir, &p.id);
        write_ppm(&rgb, &p.rgb)?;
        write_pgm(&thermal, &p.thermal)?;
        let rec = Record {
            id: p.id.clone(),
            illumination: p.illumination,
            points: p.points.clone(),
        };
        lines.push_str(&serde_json::to_string(&rec).expect("serializable record"));
        lines.push('\n');
    }
    let path = dir.join(ANNOTATIONS);
    fs::write(&path, lines).map_err(|e| Error::io(&path, e))
}

pub fn write_dataset(data: &Dataset, dir: &Path) -> Result<()> {
    for split in SPLITS {
        write_split(dir, split, data.split(split).expect("known split"))?;
    }
    Ok(())
}

pub fn read_split(dir: &Path, split: &str) -> Result<Vec<ScenePair>> {
    let dir = dir.join(split);
    if !dir.is_dir() {
        return Err(Error::io(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "split directory not found"),
        ));
    }
    let ann = dir.join(ANNOTATIONS);
    let text = fs::read_to_string(&ann).map_err(|e| Error::io(&ann, e))?;
    let record_err = |line: usize, reason: String| Error::Record {
        path: ann.clone(),
        line,
        reason,
    };

    let mut pairs = Vec::new();
    let mut expected: HashSet<String> = HashSet::from([ANNOTATIONS.to_owned()]);
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| record_err(line_no, e.to_string()))?;
        if rec.id.is_empty() || rec.id.contains(['/', '\\']) {
            return Err(record_err(line_no, format!("invalid id `{}`", rec.id)));
        }
        let (rgb_path, t_path) = image_paths(&dir, &rec.id);
        for p in [&rgb_path, &t_path] {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            if !expected.insert(name) {
                return Err(record_err(line_no, format!("duplicate id `{}`", rec.id)));
            }
        }
        let rgb = read_ppm(&rgb_path)?;
        let thermal = read_pgm(&t_path)?;
        let (rs, ts) = (rgb.shape(), thermal.shape());
        if (rs.h, rs.w) != (ts.h, ts.w) {
            return Err(record_err(
                line_no,
                format!(
                    "id `{}`: rgb is {}x{}, thermal is {}x{}",
                    rec.id, rs.w, rs.h, ts.w, ts.h
                ),
            ));
        }
        if rs.h % 32 != 0 || rs.w % 32 != 0 {
            return Err(record_err(
                line_no,
                format!("id `{}`: image size {}x{} is not a multiple of 32", rec.id, rs.w, rs.h),
            ));
        }
        if let Some(p) = rec
            .points
            .iter()
            .find(|p| !(p.x >= 0.0 && p.y >= 0.0 && p.x < rs.w as f64 && p.y < rs.h as f64))
        {
            return Err(record_err(
                line_no,
                format!(
                    "id `{}`: point [{}, {}] outside {}x{} image",
                    rec.id, p.x, p.y, rs.w, rs.h
                ),
            ));
        }
        pairs.push(ScenePair {
            id: rec.id,
            rgb,
            thermal,
            points: rec.points,
            illumination: rec.illumination,
        });
    }

    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !expected.contains(&name) {
            return Err(format_err(&entry.path(), "file not listed in annotations"));
        }
    }
    Ok(pairs)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    Ok(Dataset {
        train: read_split(dir, "train")?,
        val: read_split(dir, "val")?,
        test: read_split(dir, "test")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: &str, points: Vec<Point>) -> ScenePair {
        ScenePair {
            id: id.into(),
            rgb: Tensor4::from_fn(Shape::new(1, 3, 32, 64), |_, c, h, w| {
                ((c * 7 + h + w) % 256) as f64 / 255.0
            }),
            thermal: Tensor4::from_fn(Shape::new(1, 1, 32, 64), |_, _, h, w| ((h * w) % 256) as f64 / 255.0),
            points,
            illumination: Illumination::Dark,
        }
    }

    #[test]
    fn netpbm_round_trip_is_exact_on_the_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = pair("a", vec![]);
        write_ppm(&dir.path().join("a.ppm"), &p.rgb).unwrap();
        write_pgm(&dir.path().join("a.pgm"), &p.thermal).unwrap();
        assert_eq!(read_ppm(&dir.path().join("a.ppm")).unwrap(), p.rgb);
        assert_eq!(read_pgm(&dir.path().join("a.pgm")).unwrap(), p.thermal);
        assert!(read_pgm(&dir.path().join("a.ppm")).is_err());
    }

    #[test]
    fn empty_split_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_split(dir.path(), "val", &[]).unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join("val").join(ANNOTATIONS)).unwrap(),
            ""
        );
        assert!(read_split(dir.path(), "val").unwrap().is_empty());
    }

    #[test]
    fn out_of_bounds_point_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        write_split(dir.path(), "test", &[pair("scene_7", vec![Point { x: 64.0, y: 1.0 }])]).unwrap();
        let err = read_split(dir.path(), "test").unwrap_err().to_string();
        assert!(err.contains("scene_7") && err.contains(":1:"), "{err}");
    }

    #[test]
    fn extra_and_missing_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_split(dir.path(), "train", &[pair("a", vec![])]).unwrap();
        fs::write(dir.path().join("train/stray.txt"), "x").unwrap();
        assert!(read_split(dir.path(), "train")
            .unwrap_err()
            .to_string()
            .contains("stray.txt"));
        fs::remove_file(dir.path().join("train/stray.txt")).unwrap();
        fs::remove_file(dir.path().join("train/a.thermal.pgm")).unwrap();
        assert!(read_split(dir.path(), "train")
            .unwrap_err()
            .to_string()
            .contains("a.thermal.pgm"));
    }

    #[test]
    fn malformed_record_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write_split(dir.path(), "train", &[pair("a", vec![])]).unwrap();
        let ann = dir.path().join("train").join(ANNOTATIONS);
        let mut text = fs::read_to_string(&ann).unwrap();
        text.push_str("{\"id\": 3}\n");
        fs::write(&ann, text).unwrap();
        let err = read_split(dir.path(), "train").unwrap_err().to_string();
        assert!(err.contains("annotations.jsonl:2:"), "{err}");
    }

    #[test]
    fn missing_split_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_split(dir.path(), "test").unwrap_err().to_string();
        assert!(err.contains(&dir.path().join("test").display().to_string()));
    }
}
