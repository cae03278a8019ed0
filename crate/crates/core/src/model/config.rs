use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KvText;
use crate::layers::{AttentionConfig, PyramidConfig, VggStageConfig};

/// Which parts of the fusion module are built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Main stream only: a single VGG16 on the 4-channel concatenation.
    Baseline,
    /// Three streams fused without the attention refinement of the thermal context.
    IimNoAttn,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::IimNoAttn, Variant::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::IimNoAttn => "iim_no_attn",
            Variant::Full => "full",
        }
    }

    pub fn has_fusion(self) -> bool {
        self != Variant::Baseline
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected baseline, iim_no_attn or full)"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TafnetConfig {
    pub width_multiplier: f64,
    pub input_height: usize,
    pub input_width: usize,
    pub variant: Variant,
    pub pyramid: PyramidConfig,
    pub attention: AttentionConfig,
    pub gate_init: f64,
}

impl Default for TafnetConfig {
    fn default() -> Self {
        TafnetConfig {
            width_multiplier: 0.25,
            input_height: 64,
            input_width: 64,
            variant: Variant::Full,
            pyramid: PyramidConfig::default(),
            attention: AttentionConfig::default(),
            gate_init: 0.0,
        }
    }
}

impl TafnetConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("input_height", self.input_height), ("input_width", self.input_width)] {
            if v == 0 || v % 32 != 0 {
                return Err(Error::config(field, format!("{v} is not a positive multiple of 32")));
            }
        }
        if !self.gate_init.is_finite() {
            return Err(Error::config("gate_init", "must be finite"));
        }
        self.pyramid.validate()?;
        self.attention.validate()?;
        self.stage_configs(4)?;
        Ok(())
    }

    /// Stage configs for a stream with `in_channels` input channels.
    pub fn stage_configs(&self, in_channels: usize) -> Result<Vec<VggStageConfig>> {
        let mut c = in_channels;
        (1..=5)
            .map(|i| {
                let cfg = VggStageConfig::vgg16(i, c, self.width_multiplier)?;
                c = cfg.out_channels;
                Ok(cfg)
            })
            .collect()
    }

    /// Canonical `key = value` text; round-trips through [`TafnetConfig::parse`].
    pub fn to_canonical_text(&self) -> String {
        let bins: Vec<String> = self.pyramid.bin_sizes.iter().map(usize::to_string).collect();
        format!(
            "width_multiplier = {}\ninput_height = {}\ninput_width = {}\nvariant = {}\n\
             pyramid_bins = {}\nattention_reduction = {}\nspatial_kernel = {}\ngate_init = {}\n",
            self.width_multiplier,
            self.input_height,
            self.input_width,
            self.variant,
            bins.join(","),
            self.attention.reduction_ratio,
            self.attention.spatial_kernel,
            self.gate_init,
        )
    }

    pub(crate) fn take_from(kv: &mut KvText) -> Result<Self> {
        let d = TafnetConfig::default();
        let cfg = TafnetConfig {
            width_multiplier: kv.take_or("width_multiplier", d.width_multiplier)?,
            input_height: kv.take_or("input_height", d.input_height)?,
            input_width: kv.take_or("input_width", d.input_width)?,
            variant: kv.take_or("variant", d.variant)?,
            pyramid: PyramidConfig {
                bin_sizes: kv.take_list("pyramid_bins")?.unwrap_or(d.pyramid.bin_sizes),
            },
            attention: AttentionConfig {
                reduction_ratio: kv.take_or("attention_reduction", d.attention.reduction_ratio)?,
                spatial_kernel: kv.take_or("spatial_kernel", d.attention.spatial_kernel)?,
            },
            gate_init: kv.take_or("gate_init", d.gate_init)?,
        };
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvText::parse(text, "<model config>")?;
        let cfg = Self::take_from(&mut kv)?;
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let cfg = TafnetConfig {
            width_multiplier: 0.125,
            variant: Variant::IimNoAttn,
            gate_init: -0.3,
            pyramid: PyramidConfig {
                bin_sizes: vec![1, 2, 4],
            },
            ..TafnetConfig::default()
        };
        assert_eq!(TafnetConfig::parse(&cfg.to_canonical_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_fields_by_name() {
        let bad = TafnetConfig {
            input_height: 48,
            ..TafnetConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("input_height"));
        let bad = TafnetConfig {
            width_multiplier: 0.01,
            ..TafnetConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("width_multiplier"));
    }
}
