//! Run configuration: a flat `key = value` text file with dotted sections.
//!
//! ```text
//! # comments start with '#'
//! dataset_root = data/sleep-edf
//! split = kfold:5
//! seed = 7
//! model.preset = micro
//! model.branch_channels = 4
//! train.passes = 30
//! augment.enabled = true
//! ```
//!
//! Precedence, lowest first: built-in defaults, the config file, the dataset
//! root environment variable, command-line flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use msdan::ingest::DEFAULT_CHANNEL;
use msdan::model::ModelConfig;
use msdan::preprocess::AugmentConfig;
use msdan::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Overrides `dataset_root` when set.
pub const DATASET_ROOT_ENV: &str = "MSDAN_DATASET_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SplitSpec {
    KFold(usize),
    Holdout(f64),
}

impl FromStr for SplitSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, arg) = s.split_once(':').ok_or_else(|| format!("split {s:?}: expected kfold:K or holdout:RATIO"))?;
        match kind.trim() {
            "kfold" => {
                let k: usize = arg.trim().parse().map_err(|_| format!("split {s:?}: K must be an integer"))?;
                if k < 2 {
                    return Err(format!("split {s:?}: K must be at least 2"));
                }
                Ok(SplitSpec::KFold(k))
            }
            "holdout" => {
                let r: f64 = arg.trim().parse().map_err(|_| format!("split {s:?}: ratio must be a number"))?;
                if !(r > 0.0 && r < 1.0) {
                    return Err(format!("split {s:?}: ratio must lie in (0, 1)"));
                }
                Ok(SplitSpec::Holdout(r))
            }
            other => Err(format!("unknown split kind {other:?}")),
        }
    }
}

impl std::fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitSpec::KFold(k) => write!(f, "kfold:{k}"),
            SplitSpec::Holdout(r) => write!(f, "holdout:{r}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FetchConfig {
    pub base_url: String,
    /// `sha256 path [size]` per line, as written by `sha256sum`.
    pub manifest: Option<PathBuf>,
    pub workers: usize,
    pub retries: usize,
    pub backoff_ms: u64,
}

impl Default for FetchConfig {
    fn default() -> Self {
        Self {
            base_url: "https://physionet.org/files/sleep-edfx/1.0.0/".into(),
            manifest: None,
            workers: 4,
            retries: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelPreset {
    Default,
    Micro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub channel: String,
    pub split: SplitSpec,
    /// Folds to train and evaluate; all when `None`.
    pub folds: Option<Vec<usize>>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Epoch cache location; `<output_dir>/cache` when `None`.
    pub cache_dir: Option<PathBuf>,
    /// Use only the first N recordings (sorted by id).
    pub max_recordings: Option<usize>,
    pub model_preset: ModelPreset,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: Option<AugmentConfig>,
    pub fetch: FetchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_root: PathBuf::from("data"),
            channel: DEFAULT_CHANNEL.into(),
            split: SplitSpec::KFold(5),
            folds: None,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            cache_dir: None,
            max_recordings: None,
            model_preset: ModelPreset::Default,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            augment: Some(AugmentConfig::default()),
            fetch: FetchConfig::default(),
        }
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// a repeated key is an error.
pub fn parse_pairs(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split_once('#').map_or(line, |(a, _)| a).trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("line {}: expected key = value, got {line:?}", n + 1)))?;
        let k = k.trim().to_string();
        if !seen.insert(k.clone()) {
            return Err(CliError::config(format!("line {}: duplicate key {k:?}", n + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, v: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| CliError::config(format!("{key} = {v:?}: {e}")))
}

fn parse_list(key: &str, v: &str) -> CliResult<Vec<usize>> {
    v.split(',').map(|p| parse(key, p.trim())).collect()
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if v.is_empty() || v == "none" || v == "all" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies pairs on top of `self`. The model preset is applied before any
    /// other model key, and `model.attention_channels` follows
    /// `model.branch_channels` unless set explicitly. `train.seed` and
    /// `augment.rng_seed` follow `seed` unless set explicitly.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> CliResult<()> {
        let map: BTreeMap<&str, &str> = pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
        if let Some(p) = map.get("model.preset") {
            self.model_preset = match *p {
                "default" => ModelPreset::Default,
                "micro" => ModelPreset::Micro,
                other => return Err(CliError::config(format!("model.preset = {other:?}: expected default or micro"))),
            };
            let len = self.model.input_length;
            self.model = match self.model_preset {
                ModelPreset::Default => ModelConfig { input_length: len, ..ModelConfig::default() },
                ModelPreset::Micro => ModelConfig::micro(4, len),
            };
        }
        let mut aug = self.augment.unwrap_or_default();
        let mut aug_enabled = self.augment.is_some();
        for (key, v) in pairs {
            let (k, v) = (key.as_str(), v.as_str());
            match k {
                "dataset_root" => self.dataset_root = v.into(),
                "channel" => self.channel = v.into(),
                "split" => self.split = v.parse().map_err(CliError::config)?,
                "folds" => self.folds = if v == "all" { None } else { Some(parse_list(k, v)?) },
                "seed" => {
                    self.seed = parse(k, v)?;
                    if !map.contains_key("train.seed") {
                        self.train.seed = self.seed;
                    }
                    if !map.contains_key("augment.rng_seed") {
                        aug.rng_seed = self.seed;
                    }
                }
                "output_dir" => self.output_dir = v.into(),
                "cache_dir" => self.cache_dir = parse_opt::<String>(k, v)?.map(PathBuf::from),
                "data.max_recordings" => self.max_recordings = parse_opt(k, v)?,
                "model.preset" => {}
                "model.branch_kernel_sizes" => self.model.branch_kernel_sizes = parse_list(k, v)?,
                "model.branch_channels" => self.model.branch_channels = parse(k, v)?,
                "model.attention_channels" => self.model.attention_channels = parse(k, v)?,
                "model.attention_blocks" => self.model.attention_blocks = parse(k, v)?,
                "model.channel_attention_reduction" => self.model.channel_attention_reduction = parse(k, v)?,
                "model.block_kernel_size" => self.model.block_kernel_size = parse(k, v)?,
                "model.spatial_kernel" => self.model.spatial_kernel = parse(k, v)?,
                "model.pools" => self.model.pool_between_blocks = parse_list(k, v)?,
                "model.input_length" => self.model.input_length = parse(k, v)?,
                "model.bn_eps" => self.model.bn_eps = parse(k, v)?,
                "model.bn_momentum" => self.model.bn_momentum = parse(k, v)?,
                "train.learning_rate" => self.train.learning_rate = parse(k, v)?,
                "train.batch_size" => self.train.batch_size = parse(k, v)?,
                "train.adam_beta1" => self.train.adam_beta1 = parse(k, v)?,
                "train.adam_beta2" => self.train.adam_beta2 = parse(k, v)?,
                "train.adam_eps" => self.train.adam_eps = parse(k, v)?,
                "train.passes" => self.train.max_training_passes = parse(k, v)?,
                "train.checkpoint_every" => self.train.checkpoint_every = parse(k, v)?,
                "train.seed" => self.train.seed = parse(k, v)?,
                "augment.enabled" => aug_enabled = parse(k, v)?,
                "augment.flip_probability" => aug.flip_probability = parse(k, v)?,
                "augment.noise_fraction" => aug.noise_fraction = parse(k, v)?,
                "augment.rng_seed" => aug.rng_seed = parse(k, v)?,
                "fetch.base_url" => self.fetch.base_url = v.into(),
                "fetch.manifest" => self.fetch.manifest = parse_opt::<String>(k, v)?.map(PathBuf::from),
                "fetch.workers" => self.fetch.workers = parse(k, v)?,
                "fetch.retries" => self.fetch.retries = parse(k, v)?,
                "fetch.backoff_ms" => self.fetch.backoff_ms = parse(k, v)?,
                _ => return Err(CliError::config(format!("unknown key {k:?}"))),
            }
        }
        if map.contains_key("model.branch_channels") || map.contains_key("model.branch_kernel_sizes") {
            if !map.contains_key("model.attention_channels") {
                self.model.attention_channels = self.model.branch_channels * self.model.branch_kernel_sizes.len();
            }
        }
        self.augment = aug_enabled.then_some(aug);
        Ok(())
    }

    /// Type and range checks that do not touch the filesystem.
    pub fn validate(&self) -> CliResult<()> {
        self.model.validate().map_err(CliError::config)?;
        if self.model.num_classes != msdan::NUM_STAGES {
            return Err(CliError::config("the model must have one output per stage"));
        }
        self.train.validate().map_err(CliError::config)?;
        if let Some(a) = &self.augment {
            a.validate().map_err(CliError::config)?;
        }
        if let (SplitSpec::KFold(k), Some(folds)) = (self.split, &self.folds) {
            if let Some(f) = folds.iter().find(|&&f| f >= k) {
                return Err(CliError::config(format!("fold {f} does not exist with {k} folds")));
            }
        }
        if let (SplitSpec::Holdout(_), Some(folds)) = (self.split, &self.folds) {
            if folds.iter().any(|&f| f != 0) {
                return Err(CliError::config("hold-out has a single fold, 0"));
            }
        }
        if self.channel.trim().is_empty() {
            return Err(CliError::config("channel is empty"));
        }
        if self.fetch.workers == 0 {
            return Err(CliError::config("fetch.workers must be at least 1"));
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn fold_ids(&self) -> Vec<usize> {
        match (&self.folds, self.split) {
            (Some(f), _) => f.clone(),
            (None, SplitSpec::KFold(k)) => (0..k).collect(),
            (None, SplitSpec::Holdout(_)) => vec![0],
        }
    }

    /// Every key with its resolved value; parsing this text onto the
    /// defaults reproduces `self`.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let a = self.augment.unwrap_or_default();
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("dataset_root", self.dataset_root.display().to_string());
        line("channel", self.channel.clone());
        line("split", self.split.to_string());
        line("folds", self.folds.as_deref().map_or("all".into(), join));
        line("seed", self.seed.to_string());
        line("output_dir", self.output_dir.display().to_string());
        line("cache_dir", opt(self.cache_dir.as_ref().map(|p| p.display().to_string())));
        line("data.max_recordings", opt(self.max_recordings.map(|v| v.to_string())));
        line("model.preset", if self.model_preset == ModelPreset::Micro { "micro" } else { "default" }.into());
        line("model.branch_kernel_sizes", join(&m.branch_kernel_sizes));
        line("model.branch_channels", m.branch_channels.to_string());
        line("model.attention_channels", m.attention_channels.to_string());
        line("model.attention_blocks", m.attention_blocks.to_string());
        line("model.channel_attention_reduction", m.channel_attention_reduction.to_string());
        line("model.block_kernel_size", m.block_kernel_size.to_string());
        line("model.spatial_kernel", m.spatial_kernel.to_string());
        line("model.pools", join(&m.pool_between_blocks));
        line("model.input_length", m.input_length.to_string());
        line("model.bn_eps", m.bn_eps.to_string());
        line("model.bn_momentum", m.bn_momentum.to_string());
        line("train.learning_rate", t.learning_rate.to_string());
        line("train.batch_size", t.batch_size.to_string());
        line("train.adam_beta1", t.adam_beta1.to_string());
        line("train.adam_beta2", t.adam_beta2.to_string());
        line("train.adam_eps", t.adam_eps.to_string());
        line("train.passes", t.max_training_passes.to_string());
        line("train.checkpoint_every", t.checkpoint_every.to_string());
        line("train.seed", t.seed.to_string());
        line("augment.enabled", self.augment.is_some().to_string());
        line("augment.flip_probability", a.flip_probability.to_string());
        line("augment.noise_fraction", a.noise_fraction.to_string());
        line("augment.rng_seed", a.rng_seed.to_string());
        line("fetch.base_url", self.fetch.base_url.clone());
        line("fetch.manifest", opt(self.fetch.manifest.as_ref().map(|p| p.display().to_string())));
        line("fetch.workers", self.fetch.workers.to_string());
        line("fetch.retries", self.fetch.retries.to_string());
        line("fetch.backoff_ms", self.fetch.backoff_ms.to_string());
        s
    }
}

/// Command-line overrides, applied last.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub channel: Option<String>,
    pub split: Option<String>,
    pub out: Option<PathBuf>,
    /// Extra `key=value` settings.
    pub set: Vec<String>,
}

impl Overrides {
    fn pairs(&self) -> CliResult<Vec<(String, String)>> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| CliError::config(format!("--set {s:?}: expected KEY=VALUE")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(s) = self.seed {
            out.push(("seed".into(), s.to_string()));
        }
        if let Some(c) = &self.channel {
            out.push(("channel".into(), c.clone()));
        }
        if let Some(s) = &self.split {
            out.push(("split".into(), s.clone()));
        }
        if let Some(o) = &self.out {
            out.push(("output_dir".into(), o.display().to_string()));
        }
        Ok(out)
    }
}

/// Defaults, then `file_text`, then `env_root`, then `overrides`; validated.
pub fn resolve(file_text: Option<&str>, env_root: Option<String>, overrides: &Overrides) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(text) = file_text {
        cfg.apply(&parse_pairs(text)?)?;
    }
    if let Some(root) = env_root.filter(|r| !r.is_empty()) {
        cfg.dataset_root = root.into();
    }
    let pairs = overrides.pairs()?;
    let mut keys = BTreeSet::new();
    for (k, _) in &pairs {
        if !keys.insert(k) {
            return Err(CliError::config(format!("{k} given twice on the command line")));
        }
    }
    cfg.apply(&pairs)?;
    cfg.validate()?;
    Ok(cfg)
}
