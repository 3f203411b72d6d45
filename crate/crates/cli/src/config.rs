//! `key = value` run configuration. Command-line flags are applied on top.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use transkb::encoders::{CnnLayer, OutputLayer};
use transkb::trainer::{Mode, TrainConfig};
use transkb::transe::CorruptSide;

/// Environment variable consulted for relative paths that do not exist as given.
pub const DATA_DIR_VAR: &str = "TRANSKB_DATA_DIR";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataPaths {
    /// Directory holding `train.txt`, `valid.txt`, `test.txt`, `descriptions.txt`.
    pub data_dir: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub descriptions: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
    pub word_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataPaths,
    pub checkpoint_dir: Option<PathBuf>,
    pub metrics_log: Option<PathBuf>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow!("`{key}`: cannot parse `{value}`: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("`{key}`: expected true or false, got `{value}`"),
    }
}

pub fn parse_corrupt_side(value: &str) -> Result<CorruptSide> {
    match value {
        "left" | "head" => Ok(CorruptSide::Left),
        "right" | "tail" => Ok(CorruptSide::Right),
        "uniform_random" | "uniform" => Ok(CorruptSide::UniformRandom),
        _ => bail!("unknown corruption side `{value}` (left, right, uniform_random)"),
    }
}

pub fn parse_output(value: &str) -> Result<OutputLayer> {
    match value {
        "normalized" => Ok(OutputLayer::Normalized),
        "affine" => Ok(OutputLayer::Affine),
        _ => bail!("unknown output layer `{value}` (normalized, affine)"),
    }
}

/// `conv 64 1, conv 64 3, pool 2 2`: channels and width for convolutions,
/// width and stride for pooling.
pub fn parse_cnn_layers(value: &str) -> Result<Vec<CnnLayer>> {
    value
        .split(',')
        .map(|spec| {
            let parts: Vec<&str> = spec.split_whitespace().collect();
            let num = |s: &str| parse::<usize>("cnn_layers", s);
            match parts.as_slice() {
                ["conv", c, w] => Ok(CnnLayer::Conv { channels: num(c)?, width: num(w)? }),
                ["pool", w, s] => Ok(CnnLayer::Pool { width: num(w)?, stride: num(s)? }),
                _ => bail!("`cnn_layers`: cannot parse layer `{}`", spec.trim()),
            }
        })
        .collect()
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected `key = value`", n + 1))?;
            let key = key.trim();
            if !seen.insert(key.to_owned()) {
                bail!("line {}: `{key}` set twice", n + 1);
            }
            config.set(key, value.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_text(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Setting the mode also switches the batch size to that mode's default,
    /// unless it was already changed from the previous mode's default.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let path = || Some(PathBuf::from(value));
        match key {
            "mode" => {
                let mode: Mode = parse(key, value)?;
                if t.batch_size == TrainConfig::new(t.mode).batch_size {
                    t.batch_size = TrainConfig::new(mode).batch_size;
                }
                t.mode = mode;
            }
            "gamma" => t.gamma = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "distance" => t.distance = parse(key, value)?,
            "dim" => t.dim = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "eval_sample_size" => {
                t.eval_sample_size = match value {
                    "none" | "all" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "threads" => t.threads = parse(key, value)?,
            "filtered_negatives" => t.filtered_negatives = parse_bool(key, value)?,
            "corrupt_side" => t.corrupt_side = parse_corrupt_side(value)?,
            "renormalize_relations" => t.renormalize_relations = parse_bool(key, value)?,
            "early_stopping" => t.early_stopping = parse_bool(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "hidden" => t.hidden = parse(key, value)?,
            "output" => t.output = parse_output(value)?,
            "input_len" => t.input_len = parse(key, value)?,
            "cnn_layers" => t.cnn_layers = Some(parse_cnn_layers(value)?),
            "data_dir" => self.data.data_dir = path(),
            "train" => self.data.train = path(),
            "valid" => self.data.valid = path(),
            "test" => self.data.test = path(),
            "descriptions" => self.data.descriptions = path(),
            "word_vectors" => self.data.word_vectors = path(),
            "word_dim" => self.data.word_dim = Some(parse(key, value)?),
            "checkpoint_dir" => self.checkpoint_dir = path(),
            "metrics_log" => self.metrics_log = path(),
            _ => bail!("unknown configuration key `{key}`"),
        }
        Ok(())
    }
}

/// Uses `path` as given when it exists or is absolute, otherwise looks it up
/// under `$TRANSKB_DATA_DIR`.
pub fn resolve(path: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_VAR) {
        Some(dir) => Path::new(&dir).join(path),
        None => path.to_path_buf(),
    }
}

impl DataPaths {
    /// Explicit file paths win over files found in `data_dir`. Only the
    /// training split is required.
    pub fn dataset_paths(&self) -> Result<transkb::dataset::DatasetPaths> {
        let dir = self.data_dir.as_deref().map(resolve);
        let pick = |explicit: &Option<PathBuf>, name: &str| -> Option<PathBuf> {
            match explicit {
                Some(p) => Some(resolve(p)),
                None => dir.as_ref().map(|d| d.join(name)).filter(|p| p.exists()),
            }
        };
        let train = pick(&self.train, "train.txt")
            .ok_or_else(|| anyhow!("no training split: pass --data DIR or --train FILE"))?;
        Ok(transkb::dataset::DatasetPaths {
            train,
            validation: pick(&self.valid, "valid.txt"),
            test: pick(&self.test, "test.txt"),
            descriptions: pick(&self.descriptions, "descriptions.txt"),
        })
    }
}
