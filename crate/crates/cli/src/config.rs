use std::fmt;
use std::fs;
use std::path::Path;

use scribbleseg::affinity::{AffinityConfig, AffinityResolution, AffinityScale};
use scribbleseg::metrics::Aggregation;
use scribbleseg::trainer::{Alignment, TrainConfig};
use serde::{Deserialize, Serialize};

pub const DEFAULTS: &str = include_str!("../defaults.toml");

/// Bad flags, bad config files, missing inputs: anything reported with exit
/// status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub affinity: AffinitySection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub width_base: usize,
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub poly_decay: bool,
    pub scale_set: Vec<f64>,
    pub crop_fraction_range: [f64; 2],
    pub alignment_weights: [f64; 3],
    pub alignment_modes: Vec<String>,
    pub detach_global: bool,
    pub augment: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleName {
    InvSqrtC,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffinitySection {
    pub scale: ScaleName,
    pub stride: usize,
    pub cap: usize,
    pub levels: Vec<usize>,
    pub detach_soft: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: f64,
    pub aggregation: Aggregation,
}

impl RunConfig {
    /// The built-in defaults, or a complete config file.
    pub fn load(path: Option<&Path>) -> Result<Self, UsageError> {
        let Some(path) = path else {
            return Ok(toml::from_str(DEFAULTS).expect("built-in defaults parse"));
        };
        let shown = path.display();
        let text = fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {shown}: {e}")))?;
        Self::parse(&text).map_err(|m| UsageError(format!("{shown}: {m}")))
    }

    /// Parses a config text in which every key of the defaults is present.
    pub fn parse(text: &str) -> Result<Self, String> {
        let table: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let defaults: toml::Table = toml::from_str(DEFAULTS).expect("built-in defaults parse");
        for (section, keys) in &defaults {
            let Some(given) = table.get(section) else {
                return Err(format!("missing config section `[{section}]`"));
            };
            let given = given
                .as_table()
                .ok_or_else(|| format!("`{section}` must be a section"))?;
            let keys = keys.as_table().expect("defaults are sectioned");
            if let Some(key) = keys.keys().find(|k| !given.contains_key(*k)) {
                return Err(format!("missing config key `{section}.{key}`"));
            }
        }
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn train_config(&self) -> Result<TrainConfig, UsageError> {
        let t = &self.train;
        let modes = t
            .alignment_modes
            .iter()
            .map(|m| Alignment::parse(m).ok_or_else(|| UsageError(format!("unknown alignment mode `{m}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let a = &self.affinity;
        let cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            momentum: t.momentum,
            poly_decay: t.poly_decay,
            scale_set: t.scale_set.clone(),
            crop_fraction_range: (t.crop_fraction_range[0], t.crop_fraction_range[1]),
            alignment_weights: t.alignment_weights,
            alignment_modes: modes,
            detach_global: t.detach_global,
            affinity: AffinityConfig {
                scale: match a.scale {
                    ScaleName::InvSqrtC => AffinityScale::InvSqrtC,
                    ScaleName::None => AffinityScale::None,
                },
                resolution: match a.stride {
                    0 => AffinityResolution::Full,
                    s => AffinityResolution::Stride(s),
                },
                cap: a.cap,
                levels: a.levels.clone(),
                detach_soft: a.detach_soft,
            },
            augment: t.augment,
            seed: t.seed,
        };
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}
