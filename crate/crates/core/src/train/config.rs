use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvText;
use crate::loss::{Background, BayesianLossConfig};
use crate::model::TafnetConfig;
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Bayesian,
    /// Squared error against Gaussian ground-truth maps.
    MseOnGaussianGt,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Bayesian => "bayesian",
            LossKind::MseOnGaussianGt => "mse_on_gaussian_gt",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bayesian" => Ok(LossKind::Bayesian),
            "mse_on_gaussian_gt" => Ok(LossKind::MseOnGaussianGt),
            _ => Err(format!("unknown loss `{s}` (expected bayesian or mse_on_gaussian_gt)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// First epoch (1-based) after which the validation split is scored.
    pub val_start_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    pub bayesian: BayesianLossConfig,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            max_epochs: 300,
            val_start_epoch: 20,
            batch_size: 4,
            seed: 0,
            loss: LossKind::Bayesian,
            bayesian: BayesianLossConfig::default(),
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) {
            return Err(Error::config("lr", format!("must be positive, got {}", a.lr)));
        }
        if !(a.weight_decay >= 0.0 && a.lr * a.weight_decay < 1.0) {
            return Err(Error::config("weight_decay", "need 0 <= lr * weight_decay < 1"));
        }
        for (field, b) in [("adam_beta1", a.beta1), ("adam_beta2", a.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(a.eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if self.val_start_epoch > self.max_epochs {
            return Err(Error::config(
                "val_start_epoch",
                format!("{} exceeds max_epochs {}", self.val_start_epoch, self.max_epochs),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        self.bayesian.validate()
    }
}

/// Everything a config file can set: the model, the optimization and the
/// gradient suite.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: TafnetConfig,
    pub train: TrainConfig,
    pub gradcheck_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: TafnetConfig::default(),
            train: TrainConfig::default(),
            gradcheck_seeds: 10,
        }
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "on" => Ok(true),
        "false" | "off" => Ok(false),
        _ => Err(format!("expected true/false, got `{s}`")),
    }
}

impl RunConfig {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut kv = KvText::parse(text, source)?;
        let model = TafnetConfig::take_from(&mut kv)?;
        let d = TrainConfig::default();
        let adam = AdamConfig {
            lr: kv.take_or("lr", d.adam.lr)?,
            weight_decay: kv.take_or("weight_decay", d.adam.weight_decay)?,
            beta1: kv.take_or("adam_beta1", d.adam.beta1)?,
            beta2: kv.take_or("adam_beta2", d.adam.beta2)?,
            eps: kv.take_or("adam_eps", d.adam.eps)?,
        };
        let background_on = match kv.take::<String>("bl_background")? {
            Some(s) => parse_bool(&s).map_err(|e| Error::config("bl_background", e))?,
            None => true,
        };
        let margin = kv.take::<String>("bl_margin")?;
        let background = match (background_on, margin.as_deref()) {
            (false, _) => Background::Off,
            (true, None | Some("auto")) => Background::Auto,
            (true, Some(m)) => Background::Margin(m.parse().map_err(|e| Error::config("bl_margin", format!("{e}")))?),
        };
        let exec = match kv.take::<String>("parallel")? {
            Some(s) if !parse_bool(&s).map_err(|e| Error::config("parallel", e))? => Exec::Sequential,
            _ => Exec::default(),
        };
        let train = TrainConfig {
            adam,
            max_epochs: kv.take_or("max_epochs", d.max_epochs)?,
            val_start_epoch: kv.take_or("val_start_epoch", d.val_start_epoch)?,
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            seed: kv.take_or("seed", d.seed)?,
            loss: kv.take_or("loss", d.loss)?,
            bayesian: BayesianLossConfig {
                sigma: kv.take_or("bl_sigma", d.bayesian.sigma)?,
                background,
            },
            exec,
        };
        let gradcheck_seeds = kv.take_or("gradcheck_seeds", 10)?;
        kv.finish()?;
        let cfg = RunConfig {
            model,
            train,
            gradcheck_seeds,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.gradcheck_seeds == 0 {
            return Err(Error::config("gradcheck_seeds", "must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_recipe() {
        let c = RunConfig::parse("", Path::new("c")).unwrap();
        assert_eq!(c.train.adam.lr, 1e-5);
        assert_eq!(c.train.adam.weight_decay, 1e-4);
        assert_eq!(c.train.max_epochs, 300);
        assert_eq!(c.train.val_start_epoch, 20);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(
            (c.train.adam.beta1, c.train.adam.beta2, c.train.adam.eps),
            (0.9, 0.999, 1e-8)
        );
        assert_eq!(c.model, TafnetConfig::default());
    }

    #[test]
    fn parses_all_sections() {
        let text = "variant = baseline\nlr = 0.001\nmax_epochs = 5\nval_start_epoch = 2\n\
                    loss = mse_on_gaussian_gt\nbl_margin = 7.5\nparallel = false\nseed = 9\n";
        let c = RunConfig::parse(text, Path::new("c")).unwrap();
        assert_eq!(c.model.variant, crate::model::Variant::Baseline);
        assert_eq!(c.train.adam.lr, 1e-3);
        assert_eq!(c.train.loss, LossKind::MseOnGaussianGt);
        assert_eq!(c.train.bayesian.background, Background::Margin(7.5));
        assert_eq!(c.train.exec, Exec::Sequential);
        assert_eq!(c.train.seed, 9);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let err = RunConfig::parse("lr = 1\nlearning_rate = 2\n", Path::new("run.cfg")).unwrap_err();
        assert!(err.to_string().contains("run.cfg:2") && err.to_string().contains("learning_rate"));
        assert!(RunConfig::parse("lr = -1\n", Path::new("c"))
            .unwrap_err()
            .to_string()
            .contains("lr"));
        let e = RunConfig::parse("max_epochs = 3\nval_start_epoch = 4\n", Path::new("c")).unwrap_err();
        assert!(e.to_string().contains("val_start_epoch"));
    }
}
