//! Merged run configuration: preset defaults, then a `key = value` file,
//! then command-line flags.
//!
//! Keys are namespaced: `model.*`, `train.*` and `gen.*` forward to the
//! corresponding core configs; `preset`, `data` and `out` are top level.

use std::fmt::Write as _;
use std::path::PathBuf;

use fc2mfn::datagen::GenParams;
use fc2mfn::model::ModelConfig;
use fc2mfn::presets::Preset;
use fc2mfn::text::key_values;
use fc2mfn::training::TrainConfig;
use fc2mfn::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gen: GenParams,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub const MODEL_KEYS: &[&str] = &[
    "stage_widths",
    "base_width",
    "num_classes",
    "aspp_dilations",
    "pool_window",
    "pool_stride",
    "delta",
    "image_height",
    "image_width",
    "fuse_slave",
];

pub const TRAIN_KEYS: &[&str] =
    &["learning_rate", "beta1", "beta2", "epsilon", "batch_size", "epochs", "seed", "eval_interval"];

pub const GEN_KEYS: &[&str] = &[
    "count",
    "train_count",
    "height",
    "width",
    "buildings",
    "building_rows",
    "building_cols",
    "building_height",
    "incidence",
    "reflectivity",
    "looks",
    "kz",
    "phase_noise",
    "seed",
];

/// Every accepted key, fully qualified.
pub fn all_keys() -> Vec<String> {
    let mut v: Vec<String> = ["preset", "data", "out"].iter().map(|s| s.to_string()).collect();
    v.extend(MODEL_KEYS.iter().map(|k| format!("model.{k}")));
    v.extend(TRAIN_KEYS.iter().map(|k| format!("train.{k}")));
    v.extend(GEN_KEYS.iter().map(|k| format!("gen.{k}")));
    v
}

impl RunConfig {
    pub fn from_preset(preset: Preset) -> Self {
        Self { preset, model: preset.model(), train: preset.train(), gen: preset.gen(), data: None, out: None }
    }

    /// Resolves defaults, file and flags. The preset is taken from the
    /// flags if given, else from the file, else `paper`.
    pub fn resolve(file: Option<&str>, flags: &[(String, String)]) -> Result<Self> {
        let file_pairs = match file {
            Some(text) => key_values(text)?,
            None => Vec::new(),
        };
        let preset_value = flags
            .iter()
            .rev()
            .chain(file_pairs.iter().rev())
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.as_str())
            .unwrap_or("paper");
        let preset = Preset::parse(preset_value)
            .ok_or_else(|| Error::Config(format!("unknown preset {preset_value:?} (expected toy or paper)")))?;
        let mut c = Self::from_preset(preset);
        for (k, v) in file_pairs.iter().chain(flags) {
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(k) = key.strip_prefix("model.") {
            return self.model.set(k, value);
        }
        if let Some(k) = key.strip_prefix("train.") {
            return self.train.set(k, value);
        }
        if let Some(k) = key.strip_prefix("gen.") {
            return self.gen.set(k, value);
        }
        match key {
            "preset" => {
                Preset::parse(value).ok_or_else(|| Error::Config(format!("unknown preset {value:?}")))?;
            }
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// The resolved configuration as `key = value` lines, each prefixed by
    /// `prefix`.
    pub fn header(&self, prefix: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{prefix}preset = {}", self.preset.name());
        if let Some(d) = &self.data {
            let _ = writeln!(s, "{prefix}data = {}", d.display());
        }
        if let Some(o) = &self.out {
            let _ = writeln!(s, "{prefix}out = {}", o.display());
        }
        for (ns, text) in [("model", self.model.to_text()), ("train", self.train.to_text()), ("gen", self.gen.to_text())] {
            for line in text.lines() {
                let _ = writeln!(s, "{prefix}{ns}.{line}");
            }
        }
        s
    }
}
