use std::fmt::Write as _;

use crate::error::Result;
use crate::metrics::EvalReport;
use crate::model::{build_tafnet, ForwardOptions, TafnetConfig, Variant};

use super::{evaluate, train, RunConfig, Sample, TrainOutcome};

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub outcome: TrainOutcome,
    pub test: EvalReport,
}

/// Trains every variant from the same seed and scores each best checkpoint on
/// the test split.
pub fn ablate(cfg: &RunConfig, train_set: &[Sample], val: &[Sample], test: &[Sample]) -> Result<Vec<AblationRow>> {
    Variant::ALL
        .into_iter()
        .map(|variant| {
            let model_cfg = TafnetConfig {
                variant,
                ..cfg.model.clone()
            };
            let model = build_tafnet(model_cfg, cfg.train.seed)?;
            let outcome = train(model, train_set, val, &cfg.train)?;
            let test = evaluate(&outcome.best, test, ForwardOptions::default(), cfg.train.exec)?;
            Ok(AblationRow { variant, outcome, test })
        })
        .collect()
}

/// One row per variant:
///
/// ```text
/// variant  game0  game1  game2  game3  rmse  best_epoch
/// ```
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant\tgame0\tgame1\tgame2\tgame3\trmse\tbest_epoch\n");
    for r in rows {
        let m = &r.test.all;
        let epoch = r.outcome.best_epoch.map_or("-".to_string(), |e| e.to_string());
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{epoch}",
            r.variant, m.game[0], m.game[1], m.game[2], m.game[3], m.rmse
        )
        .unwrap();
    }
    s
}
