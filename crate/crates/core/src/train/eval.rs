use crate::data::Point;
use crate::error::{Error, Result};
use crate::loss::OUTPUT_STRIDE;
use crate::metrics::{EvalReport, ImageResult, ImageScore, MAX_LEVEL};
use crate::model::{ForwardOptions, TafnetModel};
use crate::par::Exec;
use crate::tensor::Tensor4;

use super::Sample;

/// Scores the density map `predict` returns for every sample. Images are
/// processed in parallel and collected in split order.
pub fn evaluate_maps<F>(samples: &[Sample], exec: Exec, predict: F) -> Result<EvalReport>
where
    F: Fn(&Sample) -> Result<Tensor4> + Sync + Send,
{
    if samples.is_empty() {
        return Err(Error::invalid("evaluate", "empty split"));
    }
    let images = exec.map(samples, |s| -> Result<ImageResult> {
        let map = predict(s)?;
        let ms = map.shape();
        if ms.n != 1 || ms.c != 1 {
            return Err(Error::invalid("evaluate", format!("expected a 1x1xHxW map, got {ms}")));
        }
        let points: Vec<Point> = s
            .points
            .iter()
            .map(|p| Point {
                x: p.x / OUTPUT_STRIDE,
                y: p.y / OUTPUT_STRIDE,
            })
            .collect();
        Ok(ImageResult {
            id: s.id.clone(),
            illumination: s.illumination,
            score: ImageScore::new(map.data(), ms.h, ms.w, &points, MAX_LEVEL)?,
        })
    });
    EvalReport::new(images.into_iter().collect::<Result<_>>()?)
}

pub fn evaluate(model: &TafnetModel, samples: &[Sample], opts: ForwardOptions, exec: Exec) -> Result<EvalReport> {
    evaluate_maps(samples, exec, |s| model.predict(&s.rgb, &s.thermal, opts))
}
