use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{bayesian_loss, mse_loss};
use crate::model::{ForwardOptions, TafnetModel};
use crate::params::{fnv1a, ModelParams};
use crate::tape::{Tape, Var};

use super::{evaluate, Adam, LossKind, Sample, TrainConfig};

/// Training objective of one sample on `tape`.
pub fn sample_loss(
    tape: &mut Tape,
    model: &TafnetModel,
    params: &ModelParams,
    sample: &Sample,
    cfg: &TrainConfig,
) -> Result<Var> {
    let out = model
        .arch
        .forward(tape, params, &sample.rgb, &sample.thermal, ForwardOptions::default())?;
    let points = std::slice::from_ref(&sample.points);
    let s = sample.rgb.shape();
    match cfg.loss {
        LossKind::Bayesian => bayesian_loss(tape, out.density, points, (s.h, s.w), &cfg.bayesian),
        LossKind::MseOnGaussianGt => mse_loss(tape, out.density, points, cfg.bayesian.sigma),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch.
    pub train_loss: f64,
    /// Validation `(GAME(0), RMSE)` when the epoch was evaluated.
    pub val: Option<(f64, f64)>,
    /// This epoch became the best so far.
    pub best: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    /// Tab-separated, one line per epoch after a header:
    ///
    /// ```text
    /// epoch  train_loss  val_game0  val_rmse  best
    /// ```
    ///
    /// Unevaluated epochs show `-` in both validation columns; `best` is 1 on
    /// epochs that improved the best validation GAME(0), else 0.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tval_game0\tval_rmse\tbest\n");
        for e in &self.epochs {
            let (g, r) = match e.val {
                Some((g, r)) => (g.to_string(), r.to_string()),
                None => ("-".into(), "-".into()),
            };
            writeln!(s, "{}\t{}\t{g}\t{r}\t{}", e.epoch, e.train_loss, e.best as u8).unwrap();
        }
        s
    }
}

/// Index of the evaluated record with the lowest validation GAME(0); ties go
/// to the earlier epoch.
pub fn select_best(records: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate() {
        if let Some((g, _)) = r.val {
            if best.is_none_or(|(_, b)| g < b) {
                best = Some((i, g));
            }
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trace: TrainTrace,
    /// Parameters of the best validation epoch, or the initialization when
    /// no epoch was evaluated.
    pub best: TafnetModel,
    pub best_epoch: Option<usize>,
}

pub fn train(model: TafnetModel, train_set: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, train_set, val, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    mut model: TafnetModel,
    train_set: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val.is_empty() {
        return Err(Error::invalid("train", "train and validation splits must be non-empty"));
    }
    let mut opt = Adam::new(cfg.adam, &model.params);
    let mut trace = TrainTrace::default();
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_score = f64::INFINITY;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a(b"shuffle"));
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = cfg.exec.map(batch, |&i| -> Result<(f64, Vec<Option<Vec<f64>>>)> {
                let mut tape = Tape::new();
                let loss = sample_loss(&mut tape, &model, &model.params, &train_set[i], cfg)?;
                let value = tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Ok((value, Vec::new()));
                }
                let grads = tape.backward(loss)?;
                let mut out = vec![None; model.params.len()];
                for (id, g) in grads.param_grads(&tape) {
                    out[id.index()] = Some(g.to_vec());
                }
                Ok((value, out))
            });
            let mut total: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            for r in results {
                let (value, grads) = r?;
                if !value.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("training loss at epoch {epoch}, batch {b}"),
                    });
                }
                loss_sum += value;
                for (t, g) in total.iter_mut().zip(grads) {
                    if let Some(g) = g {
                        t.iter_mut().zip(&g).for_each(|(t, g)| *t += g);
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            total.iter_mut().flatten().for_each(|g| *g *= scale);
            opt.step(&mut model.params, &total).map_err(|e| match e {
                Error::NonFinite { context } => Error::NonFinite {
                    context: format!("{context} at epoch {epoch}, batch {b}"),
                },
                e => e,
            })?;
        }

        let mut record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val: None,
            best: false,
        };
        if epoch >= cfg.val_start_epoch {
            let report = evaluate(&model, val, ForwardOptions::default(), cfg.exec)?;
            record.val = Some((report.all.game[0], report.all.rmse));
            if report.all.game[0] < best_score {
                best_score = report.all.game[0];
                best = model.clone();
                best_epoch = Some(epoch);
                record.best = true;
            }
        }
        on_epoch(&record);
        trace.epochs.push(record);
    }
    Ok(TrainOutcome {
        trace,
        best,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, val: Option<f64>) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 1.0,
            val: val.map(|g| (g, g)),
            best: false,
        }
    }

    #[test]
    fn best_is_argmin_with_earlier_tie() {
        let t = [
            rec(1, None),
            rec(2, Some(3.0)),
            rec(3, Some(2.0)),
            rec(4, Some(2.0)),
            rec(5, Some(2.5)),
        ];
        assert_eq!(select_best(&t), Some(2));
        assert_eq!(select_best(&t[..2]), Some(1));
        assert_eq!(select_best(&t[..1]), None);
    }

    #[test]
    fn trace_format() {
        let t = TrainTrace {
            epochs: vec![
                rec(1, None),
                EpochRecord {
                    best: true,
                    ..rec(2, Some(0.5))
                },
            ],
        };
        assert_eq!(
            t.to_tsv(),
            "epoch\ttrain_loss\tval_game0\tval_rmse\tbest\n1\t1\t-\t-\t0\n2\t1\t0.5\t0.5\t1\n"
        );
    }
}
