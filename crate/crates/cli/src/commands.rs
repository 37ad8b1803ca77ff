use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use nestbox_core::data::{load_cifar_binary, load_idx, synth_blobs, write_idx};
use nestbox_core::harness::{evaluate_checkpoint, EvalReport, JsonlSink};
use nestbox_core::{
    baseline_sgd_sequence, build_stream, run_sequence, verify_guarantees, Checkpoint, Dataset, Error, Method,
    SequenceReport, Split, TaskStream, VerificationReport,
};

use crate::config::{BlobConfig, ConfigError, DatasetKind, RunConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.nbx";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "run.cfg";
pub const EVAL_FILE: &str = "eval.json";
pub const VERIFY_FILE: &str = "verification.json";

/// File names the `idx` dataset expects inside `data_dir`.
pub const IDX_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Violation = 1,
    Config = 2,
    Data = 3,
    Failure = 4,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    fn new(exit: Exit, message: impl Into<String>) -> Self {
        Self {
            exit,
            message: message.into(),
        }
    }

    fn data(context: &str, e: impl fmt::Display) -> Self {
        Self::new(Exit::Data, format!("{context}: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::new(Exit::Config, e.0)
    }
}

/// Classifies a library error raised while training or evaluating.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let exit = match e {
            Error::Config(_) | Error::Architecture(_) => Exit::Config,
            Error::Io(_) | Error::Format(_) | Error::Checkpoint(_) | Error::EmptyDataset(_) => Exit::Data,
            _ => Exit::Failure,
        };
        Self::new(exit, e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Training and test sets named by the config.
pub fn load_data(cfg: &RunConfig) -> CliResult<(Dataset, Dataset)> {
    let dir = cfg.data_dir.as_deref();
    match cfg.dataset {
        DatasetKind::Idx => {
            let dir = dir.ok_or_else(|| CliError::new(Exit::Config, "dataset = idx needs data_dir"))?;
            let p: Vec<PathBuf> = IDX_FILES.iter().map(|f| dir.join(f)).collect();
            let train = load_idx(&p[0], &p[1], Split::Train).map_err(|e| CliError::data("training set", e))?;
            let test = load_idx(&p[2], &p[3], Split::Test).map_err(|e| CliError::data("test set", e))?;
            Ok((train, test))
        }
        DatasetKind::Blobs => {
            let b = &cfg.blobs;
            let train = synth_blobs(b.classes, b.per_class, b.dim, b.separation, b.seed, Split::Train)?;
            let test = synth_blobs(b.classes, b.test_per_class, b.dim, b.separation, b.seed, Split::Test)?;
            Ok((train, test))
        }
        DatasetKind::Cifar10 => {
            let dir = dir.ok_or_else(|| CliError::new(Exit::Config, "dataset = cifar10 needs data_dir"))?;
            let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
            let train_refs: Vec<&Path> = train.iter().map(PathBuf::as_path).collect();
            let test = dir.join("test_batch.bin");
            let train =
                load_cifar_binary(&train_refs, 1, Split::Train).map_err(|e| CliError::data("training set", e))?;
            let test = load_cifar_binary(&[&test], 1, Split::Test).map_err(|e| CliError::data("test set", e))?;
            Ok((train, test))
        }
    }
}

fn stream_for(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> CliResult<TaskStream> {
    Ok(build_stream(
        train,
        test,
        cfg.scenario,
        cfg.n_tasks,
        cfg.classes_per_task,
        cfg.train.seed,
    )?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::new(Exit::Failure, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::data(&path.display().to_string(), e))
}

fn install_threads(n: usize) {
    // A second call in the same process keeps the first pool, which is fine:
    // results never depend on the thread count.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

/// What `train` produced.
#[derive(Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub report: SequenceReport,
    pub checkpoint: Checkpoint,
}

/// Runs a full task sequence and writes checkpoint, metrics and report.
///
/// Nothing is written before the config and data have been validated, and
/// the checkpoint only appears once the whole sequence has finished.
pub fn train(cfg: &RunConfig) -> CliResult<TrainOutcome> {
    cfg.validate()?;
    install_threads(cfg.threads);
    let (train, test) = load_data(cfg)?;
    let stream = stream_for(cfg, &train, &test)?;
    let arch = cfg.architecture(train.shape);
    arch.plan()?;

    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| CliError::data(&out.display().to_string(), e))?;
    fs::write(out.join(CONFIG_FILE), cfg.render()).map_err(|e| CliError::data("run config", e))?;
    let metrics = File::create(out.join(METRICS_FILE)).map_err(|e| CliError::data("metrics file", e))?;
    let mut sink = JsonlSink::new(BufWriter::new(metrics));

    info!(
        "training {} tasks ({} scenario, {:?}) on {} examples",
        stream.len(),
        cfg.scenario,
        cfg.method,
        train.len()
    );
    let (report, mut checkpoint) = match cfg.method {
        Method::Interval => run_sequence(&stream, &train, &test, &arch, &cfg.train, &mut sink)?,
        Method::Sgd => baseline_sgd_sequence(&stream, &train, &test, &arch, &cfg.baseline(), &mut sink)?,
    };
    sink.into_inner()
        .flush()
        .map_err(|e| CliError::data("metrics file", e))?;
    checkpoint.config = cfg.to_map();
    write_json(&out.join(REPORT_FILE), &report)?;
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    Ok(TrainOutcome {
        out_dir: out,
        report,
        checkpoint,
    })
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| CliError::data(&path.display().to_string(), e))
}

/// The run config: the explicit one if given, else the one stored in the
/// checkpoint, with `overrides` applied either way.
pub fn resolve_config(ck: &Checkpoint, config: Option<&Path>, overrides: &[(String, String)]) -> CliResult<RunConfig> {
    match config {
        Some(p) => Ok(RunConfig::load(p, overrides)?),
        None => {
            if !ck.config.contains_key("dataset") {
                return Err(CliError::new(
                    Exit::Config,
                    "checkpoint carries no run config; pass --config",
                ));
            }
            let mut pairs: Vec<(String, String)> = ck.config.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            pairs.extend_from_slice(overrides);
            Ok(RunConfig::from_pairs(&pairs)?)
        }
    }
}

/// Rebuilds the accuracy matrix of a checkpoint on the test set.
pub fn eval(checkpoint: &Path, cfg: &RunConfig) -> CliResult<EvalReport> {
    let ck = load_checkpoint(checkpoint)?;
    install_threads(cfg.threads);
    let (train, test) = load_data(cfg)?;
    let stream = stream_for(cfg, &train, &test)?;
    Ok(evaluate_checkpoint(&ck, &stream, &test)?)
}

/// Checks every guarantee recorded in a checkpoint.
pub fn verify(checkpoint: &Path, cfg: &RunConfig, samples: usize) -> CliResult<VerificationReport> {
    let ck = load_checkpoint(checkpoint)?;
    install_threads(cfg.threads);
    let (train, test) = load_data(cfg)?;
    let stream = stream_for(cfg, &train, &test)?;
    Ok(verify_guarantees(&ck, &stream, &train, samples, cfg.train.seed)?)
}

/// Writes a blob dataset as IDX files that `dataset = idx` can read.
pub fn synth(out: &Path, blobs: &BlobConfig) -> CliResult<()> {
    let train = synth_blobs(
        blobs.classes,
        blobs.per_class,
        blobs.dim,
        blobs.separation,
        blobs.seed,
        Split::Train,
    )?;
    let test = synth_blobs(
        blobs.classes,
        blobs.test_per_class,
        blobs.dim,
        blobs.separation,
        blobs.seed,
        Split::Test,
    )?;
    fs::create_dir_all(out).map_err(|e| CliError::data(&out.display().to_string(), e))?;
    let p: Vec<PathBuf> = IDX_FILES.iter().map(|f| out.join(f)).collect();
    write_idx(&train, &p[0], &p[1]).map_err(|e| CliError::data("training set", e))?;
    write_idx(&test, &p[2], &p[3]).map_err(|e| CliError::data("test set", e))?;
    Ok(())
}

/// Text table of an accuracy matrix: row `k` is the model after task `k`.
pub fn format_matrix(matrix: &[Vec<Option<f64>>]) -> String {
    let mut out = String::new();
    for (k, row) in matrix.iter().enumerate() {
        out.push_str(&format!("after task {k}:"));
        for v in row {
            match v {
                Some(a) => out.push_str(&format!(" {:7.4}", a)),
                None => out.push_str("       -"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_eval(path: &Path, report: &EvalReport) -> CliResult<()> {
    write_json(path, report)
}

pub fn write_verification(path: &Path, report: &VerificationReport) -> CliResult<()> {
    write_json(path, report)
}
