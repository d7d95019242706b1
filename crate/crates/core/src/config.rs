//! Flat `key = value` run configuration with `#` comments and dotted keys.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::{SplitKind, SplitSpec};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainSpec;

/// Parsed `key = value` pairs in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues(pub Vec<(String, String)>);

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            pairs.push((k.to_string(), v.trim().to_string()));
        }
        Ok(KeyValues(pairs))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for `{key}`"))),
    }
}

/// Parses a comma-separated list such as `2021,2022,2023`.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Dataset location and protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub name: String,
    pub path: PathBuf,
    pub split: SplitKind,
    pub context: bool,
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            name: String::new(),
            path: PathBuf::new(),
            split: SplitKind::ETT_HOURLY,
            context: true,
            standardize: true,
        }
    }
}

impl DataConfig {
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            kind: self.split,
            context: self.context,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainSpec,
    pub data: DataConfig,
    pub seeds: Vec<u64>,
    pub horizons: Vec<usize>,
    pub deterministic: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainSpec::default(),
            data: DataConfig::default(),
            seeds: vec![2021],
            horizons: vec![96],
            deterministic: true,
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// Keys written by [`RunConfig::to_text`], in order.
pub const KEYS: &[&str] = &[
    "data.name",
    "data.path",
    "data.split",
    "data.context",
    "data.standardize",
    "model.lookback",
    "model.horizon",
    "model.channels",
    "model.patch_len",
    "model.stride",
    "model.d_model",
    "model.blocks",
    "model.bottleneck",
    "model.basis",
    "model.hahn_a",
    "model.hahn_b",
    "model.hahn_n",
    "model.degree",
    "model.mode",
    "model.intra",
    "model.inter",
    "model.revin_eps",
    "model.init_scale",
    "train.max_epochs",
    "train.patience",
    "train.lr",
    "train.batch_size",
    "train.seed",
    "train.clip_norm",
    "run.seeds",
    "run.horizons",
    "run.deterministic",
    "run.out_dir",
];

impl RunConfig {
    /// Applies one `key = value` assignment. Unknown keys are errors naming the key;
    /// `manifest.*` keys are informational and skipped.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "data.name" => d.name = value.to_string(),
            "data.path" => d.path = PathBuf::from(value),
            "data.split" => d.split = value.parse()?,
            "data.context" => d.context = parse_bool(key, value)?,
            "data.standardize" => d.standardize = parse_bool(key, value)?,
            "model.lookback" => m.lookback = parse_value(key, value)?,
            "model.horizon" => m.horizon = parse_value(key, value)?,
            "model.channels" => m.channels = parse_value(key, value)?,
            "model.patch_len" => m.patch_len = parse_value(key, value)?,
            "model.stride" => m.stride = parse_value(key, value)?,
            "model.d_model" => m.d_model = parse_value(key, value)?,
            "model.blocks" => m.blocks = parse_value(key, value)?,
            "model.bottleneck" => m.bottleneck = parse_value(key, value)?,
            "model.basis" => m.basis = value.parse()?,
            "model.hahn_a" => m.hahn_a = parse_value(key, value)?,
            "model.hahn_b" => m.hahn_b = parse_value(key, value)?,
            "model.hahn_n" => m.hahn_n = parse_value(key, value)?,
            "model.degree" => m.degree = parse_value(key, value)?,
            "model.mode" => m.mode = value.parse()?,
            "model.intra" => m.intra = parse_bool(key, value)?,
            "model.inter" => m.inter = parse_bool(key, value)?,
            "model.revin_eps" => m.revin_eps = parse_value(key, value)?,
            "model.init_scale" => m.init_scale = parse_value(key, value)?,
            "train.max_epochs" => t.max_epochs = parse_value(key, value)?,
            "train.patience" => t.patience = parse_value(key, value)?,
            "train.lr" => t.lr = parse_value(key, value)?,
            "train.batch_size" => t.batch_size = parse_value(key, value)?,
            "train.seed" => t.seed = parse_value(key, value)?,
            "train.clip_norm" => {
                t.clip_norm = match value {
                    "off" | "none" | "" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "run.seeds" => self.seeds = parse_list(key, value)?,
            "run.horizons" => self.horizons = parse_list(key, value)?,
            "run.deterministic" => self.deterministic = parse_bool(key, value)?,
            "run.out_dir" => self.out_dir = PathBuf::from(value),
            k if k.starts_with("manifest.") => {}
            k => return Err(Error::Config(format!("unknown config key `{k}`"))),
        }
        Ok(())
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in &kv.0 {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        RunConfig::from_key_values(&KeyValues::parse(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Value of `key` as it is written by [`Self::to_text`].
    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let t = &self.train;
        let d = &self.data;
        Some(match key {
            "data.name" => d.name.clone(),
            "data.path" => d.path.display().to_string(),
            "data.split" => d.split.to_string(),
            "data.context" => d.context.to_string(),
            "data.standardize" => d.standardize.to_string(),
            "model.lookback" => m.lookback.to_string(),
            "model.horizon" => m.horizon.to_string(),
            "model.channels" => m.channels.to_string(),
            "model.patch_len" => m.patch_len.to_string(),
            "model.stride" => m.stride.to_string(),
            "model.d_model" => m.d_model.to_string(),
            "model.blocks" => m.blocks.to_string(),
            "model.bottleneck" => m.bottleneck.to_string(),
            "model.basis" => m.basis.to_string(),
            "model.hahn_a" => m.hahn_a.to_string(),
            "model.hahn_b" => m.hahn_b.to_string(),
            "model.hahn_n" => m.hahn_n.to_string(),
            "model.degree" => m.degree.to_string(),
            "model.mode" => m.mode.to_string(),
            "model.intra" => m.intra.to_string(),
            "model.inter" => m.inter.to_string(),
            "model.revin_eps" => m.revin_eps.to_string(),
            "model.init_scale" => m.init_scale.to_string(),
            "train.max_epochs" => t.max_epochs.to_string(),
            "train.patience" => t.patience.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.clip_norm" => t.clip_norm.map_or("off".to_string(), |c| c.to_string()),
            "run.seeds" => join(&self.seeds),
            "run.horizons" => join(&self.horizons),
            "run.deterministic" => self.deterministic.to_string(),
            "run.out_dir" => self.out_dir.display().to_string(),
            _ => return None,
        })
    }

    /// Every key, one per line; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("run.seeds is empty".into()));
        }
        Ok(())
    }
}

/// Model hyperparameters as `model.*` lines.
pub fn model_config_text(model: &ModelConfig) -> String {
    let run = RunConfig {
        model: model.clone(),
        ..RunConfig::default()
    };
    KEYS.iter()
        .filter(|k| k.starts_with("model."))
        .map(|k| format!("{k} = {}\n", run.get(k).unwrap()))
        .collect()
}

/// Reads `model.*` keys; other keys must still be valid run keys.
pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    Ok(RunConfig::parse(text)?.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kan::LayerMode;
    use crate::poly::BasisKind;

    #[test]
    fn round_trip_default_and_custom() {
        let base = RunConfig::default();
        assert_eq!(RunConfig::parse(&base.to_text()).unwrap(), base);
        let mut c = RunConfig::default();
        c.model.basis = BasisKind::Chebyshev;
        c.model.mode = LayerMode::Linear;
        c.model.hahn_a = 0.1 + 0.2;
        c.train.lr = 2.5e-3;
        c.train.clip_norm = Some(1.0 / 3.0);
        c.data.split = SplitKind::Ratio;
        c.data.path = PathBuf::from("data/x y.csv");
        c.seeds = vec![2021, 2022, 2023];
        c.horizons = vec![24, 36, 48, 60];
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_unknown_keys() {
        let c = RunConfig::parse("# header\nmodel.blocks = 3  # inline\n\n").unwrap();
        assert_eq!(c.model.blocks, 3);
        let err = RunConfig::parse("model.blokcs = 3").unwrap_err();
        assert!(err.to_string().contains("model.blokcs"));
        assert!(RunConfig::parse("model.blocks 3").is_err());
        assert!(RunConfig::parse("manifest.wall_seconds = 12").is_ok());
    }

    #[test]
    fn model_text_round_trip() {
        let m = ModelConfig {
            d_model: 16,
            lookback: 104,
            ..ModelConfig::default()
        };
        assert_eq!(parse_model_config(&model_config_text(&m)).unwrap(), m);
    }
}
