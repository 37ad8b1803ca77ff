//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys are rejected. `--set key=value` overrides are applied after
//! the file, in order. The training defaults depend on the scenario, so the
//! scenario is resolved first and every other key overrides its preset.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nestbox_core::harness::BaselineConfig;
use nestbox_core::nn::{format_layers, parse_layers, Layer};
use nestbox_core::{Architecture, Method, Scenario, TrainConfig};

/// Every accepted key with a one-line description, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("dataset", "idx | blobs | cifar10 (cifar10 needs experimental = true)"),
    ("data_dir", "directory holding the dataset files"),
    ("blobs_classes", "number of blob classes"),
    ("blobs_per_class", "training examples per blob class"),
    ("blobs_test_per_class", "test examples per blob class"),
    ("blobs_dim", "blob input dimension"),
    ("blobs_separation", "center distance in noise standard deviations"),
    ("blobs_seed", "seed for blob centers and noise"),
    ("scenario", "task | domain | class"),
    ("n_tasks", "number of tasks"),
    ("classes_per_task", "classes per task"),
    (
        "layers",
        "comma separated hidden layers, e.g. dense:400,relu,dense:400,relu",
    ),
    ("method", "interval | sgd"),
    ("center_epochs", "epochs of center training per task"),
    ("radii_epochs", "maximum epochs of radii training per task"),
    ("batch_size", "minibatch size"),
    ("lr_center", "center learning rate"),
    ("lr_radii", "radii learning rate"),
    ("acc_thresh", "share of center accuracy that must be guaranteed"),
    ("initial_radius", "radius of the first box around the initialization"),
    ("running_window", "batches averaged by the stopping rule"),
    ("nu_reset", "value the radius parameters are reset to"),
    ("baseline_lr", "learning rate of the SGD baseline"),
    ("baseline_epochs", "epochs per task of the SGD baseline"),
    ("seed", "seed for initialization, shuffling and sampling"),
    ("out_dir", "output directory"),
    ("threads", "worker threads (results do not depend on it)"),
    ("experimental", "enable loaders outside the tested set"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Idx,
    Blobs,
    Cifar10,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Idx => "idx",
            DatasetKind::Blobs => "blobs",
            DatasetKind::Cifar10 => "cifar10",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "idx" | "mnist" => Ok(DatasetKind::Idx),
            "blobs" => Ok(DatasetKind::Blobs),
            "cifar10" => Ok(DatasetKind::Cifar10),
            other => err(format!("unknown dataset `{other}`")),
        }
    }
}

/// Synthetic blob settings.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobConfig {
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            classes: 6,
            per_class: 200,
            test_per_class: 100,
            dim: 8,
            separation: 4.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub blobs: BlobConfig,
    pub scenario: Scenario,
    pub n_tasks: usize,
    pub classes_per_task: usize,
    pub layers: Vec<Layer>,
    pub method: Method,
    pub train: TrainConfig,
    pub baseline_lr: f64,
    pub baseline_epochs: usize,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub experimental: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_scenario(Scenario::IncrementalTask)
    }
}

/// Splits config text into `(key, value)` pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match parse_assignment(line) {
            Some(kv) => pairs.push(kv),
            None => return err(format!("line {}: expected `key = value`, got `{}`", n + 1, raw.trim())),
        }
    }
    Ok(pairs)
}

/// Parses a single `key=value` assignment, as given to `--set`.
pub fn parse_assignment(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return None;
    }
    Some((k.to_string(), v.to_string()))
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse()
        .map_err(|_| ConfigError(format!("`{key}`: cannot parse `{v}`")))
}

fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => err(format!("`{key}`: expected true or false, got `{v}`")),
    }
}

impl RunConfig {
    /// Defaults for a scenario: split MNIST into five tasks of two classes,
    /// two hidden layers of 400 units.
    pub fn for_scenario(scenario: Scenario) -> Self {
        Self {
            dataset: DatasetKind::Idx,
            data_dir: None,
            blobs: BlobConfig::default(),
            scenario,
            n_tasks: 5,
            classes_per_task: 2,
            layers: parse_layers("dense:400,relu,dense:400,relu").expect("default layers"),
            method: Method::Interval,
            train: TrainConfig::mnist(scenario),
            baseline_lr: 0.001,
            baseline_epochs: 30,
            out_dir: PathBuf::from("runs/latest"),
            threads: 1,
            experimental: false,
        }
    }

    /// Builds a config from pairs, later pairs winning.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, ConfigError> {
        let scenario = match pairs.iter().rev().find(|(k, _)| k == "scenario") {
            Some((_, v)) => v
                .parse::<Scenario>()
                .map_err(|e| ConfigError(format!("`scenario`: {e}")))?,
            None => Scenario::IncrementalTask,
        };
        let mut cfg = Self::for_scenario(scenario);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies `overrides` on top.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut pairs = parse_pairs(&text)?;
        pairs.extend_from_slice(overrides);
        Self::from_pairs(&pairs)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let pairs: Vec<(String, String)> = map.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        Self::from_pairs(&pairs)
    }

    /// Applies one setting without validating the whole config.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let t = &mut self.train;
        match key {
            "dataset" => self.dataset = v.parse()?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "blobs_classes" => self.blobs.classes = num(key, v)?,
            "blobs_per_class" => self.blobs.per_class = num(key, v)?,
            "blobs_test_per_class" => self.blobs.test_per_class = num(key, v)?,
            "blobs_dim" => self.blobs.dim = num(key, v)?,
            "blobs_separation" => self.blobs.separation = num(key, v)?,
            "blobs_seed" => self.blobs.seed = num(key, v)?,
            "scenario" => {
                let s: Scenario = v.parse().map_err(|e| ConfigError(format!("`scenario`: {e}")))?;
                if s != self.scenario {
                    return err("`scenario` must be set before the scenario defaults are applied");
                }
            }
            "n_tasks" => self.n_tasks = num(key, v)?,
            "classes_per_task" => self.classes_per_task = num(key, v)?,
            "layers" => {
                self.layers = if v.is_empty() {
                    Vec::new()
                } else {
                    parse_layers(v).map_err(|e| ConfigError(format!("`layers`: {e}")))?
                }
            }
            "method" => {
                self.method = match v {
                    "interval" => Method::Interval,
                    "sgd" => Method::Sgd,
                    _ => return err(format!("`method`: expected interval or sgd, got `{v}`")),
                }
            }
            "center_epochs" => t.center_epochs = num(key, v)?,
            "radii_epochs" => t.radii_epochs = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "lr_center" => t.lr_center = num(key, v)?,
            "lr_radii" => t.lr_radii = num(key, v)?,
            "acc_thresh" => t.acc_thresh = num(key, v)?,
            "initial_radius" => t.initial_radius = num(key, v)?,
            "running_window" => t.running_window = num(key, v)?,
            "nu_reset" => t.nu_reset = num(key, v)?,
            "baseline_lr" => self.baseline_lr = num(key, v)?,
            "baseline_epochs" => self.baseline_epochs = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "threads" => self.threads = num(key, v)?,
            "experimental" => self.experimental = boolean(key, v)?,
            other => return err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| ConfigError(e.to_string()))?;
        if self.n_tasks == 0 || self.classes_per_task == 0 {
            return err("n_tasks and classes_per_task must be positive");
        }
        if self.threads == 0 {
            return err("threads must be at least 1");
        }
        if !(self.baseline_lr.is_finite() && self.baseline_lr > 0.0) {
            return err("baseline_lr must be positive");
        }
        match self.dataset {
            DatasetKind::Idx if self.data_dir.is_none() => return err("dataset = idx needs data_dir"),
            DatasetKind::Cifar10 if !self.experimental => {
                return err("dataset = cifar10 is experimental; set experimental = true")
            }
            DatasetKind::Cifar10 if self.data_dir.is_none() => return err("dataset = cifar10 needs data_dir"),
            DatasetKind::Blobs => {
                let b = &self.blobs;
                if b.classes == 0 || b.per_class == 0 || b.test_per_class == 0 || b.dim == 0 {
                    return err("blob counts and dimension must be positive");
                }
                if !(b.separation.is_finite() && b.separation > 0.0) {
                    return err("blobs_separation must be positive");
                }
            }
            _ => {}
        }
        if self.layers.iter().any(|l| matches!(l, Layer::BatchNorm)) {
            return err("batchnorm layers are not supported");
        }
        Ok(())
    }

    /// Network for data of the given input shape.
    pub fn architecture(&self, input: nestbox_core::nn::InputShape) -> Architecture {
        Architecture {
            input,
            layers: self.layers.clone(),
            outputs: self.scenario.outputs(self.n_tasks, self.classes_per_task),
            heads: self.scenario.heads(self.n_tasks),
        }
    }

    pub fn baseline(&self) -> BaselineConfig {
        BaselineConfig {
            epochs: self.baseline_epochs,
            batch_size: self.train.batch_size,
            lr: self.baseline_lr,
            seed: self.train.seed,
        }
    }

    /// Canonical form; [`RunConfig::from_map`] reads it back unchanged.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let b = &self.blobs;
        let method = match self.method {
            Method::Interval => "interval",
            Method::Sgd => "sgd",
        };
        let entries: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.name().to_string()),
            (
                "data_dir",
                self.data_dir
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("blobs_classes", b.classes.to_string()),
            ("blobs_per_class", b.per_class.to_string()),
            ("blobs_test_per_class", b.test_per_class.to_string()),
            ("blobs_dim", b.dim.to_string()),
            ("blobs_separation", b.separation.to_string()),
            ("blobs_seed", b.seed.to_string()),
            ("scenario", self.scenario.name().to_string()),
            ("n_tasks", self.n_tasks.to_string()),
            ("classes_per_task", self.classes_per_task.to_string()),
            ("layers", format_layers(&self.layers)),
            ("method", method.to_string()),
            ("center_epochs", t.center_epochs.to_string()),
            ("radii_epochs", t.radii_epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr_center", t.lr_center.to_string()),
            ("lr_radii", t.lr_radii.to_string()),
            ("acc_thresh", t.acc_thresh.to_string()),
            ("initial_radius", t.initial_radius.to_string()),
            ("running_window", t.running_window.to_string()),
            ("nu_reset", t.nu_reset.to_string()),
            ("baseline_lr", self.baseline_lr.to_string()),
            ("baseline_epochs", self.baseline_epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("threads", self.threads.to_string()),
            ("experimental", self.experimental.to_string()),
        ];
        entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// The config as file text, one key per line.
    pub fn render(&self) -> String {
        let map = self.to_map();
        let mut out = String::new();
        for (k, _) in KEYS {
            out.push_str(&format!("{k} = {}\n", map[*k]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(text: &str) -> Vec<(String, String)> {
        parse_pairs(text).unwrap()
    }

    #[test]
    fn task_defaults() {
        let c = RunConfig::from_pairs(&pairs("data_dir = x")).unwrap();
        assert_eq!(c.train.acc_thresh, 0.9);
        assert_eq!(c.train.lr_center, 1.0);
        assert_eq!(c.train.lr_radii, 100.0);
        assert_eq!(c.train.initial_radius, 1.0);
        assert_eq!(c.train.batch_size, 128);
        assert_eq!(c.train.center_epochs + c.train.radii_epochs, 30);
    }

    #[test]
    fn scenario_picks_preset_wherever_it_appears() {
        let c = RunConfig::from_pairs(&pairs("lr_radii = 5\ndata_dir = x\nscenario = domain")).unwrap();
        assert_eq!(c.scenario, Scenario::IncrementalDomain);
        assert_eq!(c.train.acc_thresh, 0.8);
        assert_eq!(c.train.lr_radii, 5.0);
        let c = RunConfig::from_pairs(&pairs("scenario = class\ndata_dir = x")).unwrap();
        assert_eq!((c.train.lr_center, c.train.lr_radii), (0.001, 1.0));
    }

    #[test]
    fn comments_and_blank_lines() {
        let p = pairs("# header\n\nseed = 3  # trailing\n  batch_size=64\n");
        assert_eq!(p, vec![("seed".into(), "3".into()), ("batch_size".into(), "64".into())]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_pairs(&pairs("data_dir = x\nlearning_rate = 1")).is_err());
        assert!(RunConfig::from_pairs(&pairs("data_dir = x\nseed = -1")).is_err());
        assert!(RunConfig::from_pairs(&pairs("data_dir = x\nacc_thresh = 1.5")).is_err());
        assert!(RunConfig::from_pairs(&pairs("data_dir = x\nscenario = online")).is_err());
        assert!(parse_pairs("just words").is_err());
        assert!(RunConfig::from_pairs(&pairs("dataset = idx")).is_err());
        assert!(RunConfig::from_pairs(&pairs("dataset = cifar10\ndata_dir = x")).is_err());
    }

    #[test]
    fn map_round_trip() {
        let c = RunConfig::from_pairs(&pairs(
            "dataset = blobs\nscenario = class\nn_tasks = 3\nlayers = dense:16,tanh\nacc_thresh = 0.35\nseed = 9",
        ))
        .unwrap();
        assert_eq!(RunConfig::from_map(&c.to_map()).unwrap(), c);
        assert_eq!(RunConfig::from_pairs(&pairs(&c.render())).unwrap(), c);
    }

    #[test]
    fn every_key_is_documented() {
        let c = RunConfig::default();
        let map = c.to_map();
        assert_eq!(map.len(), KEYS.len());
        for (k, _) in KEYS {
            assert!(map.contains_key(*k), "{k}");
        }
    }
}
