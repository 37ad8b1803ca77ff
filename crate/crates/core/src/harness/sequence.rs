use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};

use super::metrics::{MetricRecord, MetricSink};
use super::stream::TaskStream;
use crate::autograd::Matrix;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Architecture, Checkpoint, Network, ParamBox};
use crate::training::{
    accuracy_at, evaluate_box, freeze_task, train_plain, train_task, EpochRecord, TaskReport, TrainConfig,
};

/// Training method recorded in a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Nested parameter boxes.
    Interval,
    /// Unconstrained sequential SGD.
    Sgd,
}

/// What was promised for a task when its box was frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeRecord {
    pub task: usize,
    /// Fraction of the task's training set that every parameter vector in
    /// the frozen box classifies correctly.
    pub guaranteed_acc: f64,
    pub acc_thresh: f64,
    /// Center accuracy on the task's training set at freeze time.
    pub train_acc: f64,
    pub region_size: f64,
    pub threshold_met: bool,
}

/// Settings of the sequential SGD baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            lr: 0.001,
            seed: 0,
        }
    }
}

/// Results of a whole task sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub method: Method,
    pub scenario: crate::nn::Scenario,
    /// `accuracy[k][j]`: test accuracy at the centers on task `j` after
    /// training task `k`; `None` for tasks not yet seen.
    pub accuracy: Vec<Vec<Option<f64>>>,
    /// Same layout for guaranteed test accuracy (interval runs only).
    pub guaranteed_accuracy: Vec<Vec<Option<f64>>>,
    /// Mean of the last accuracy row.
    pub average_accuracy: f64,
    pub guarantees: Vec<GuaranteeRecord>,
    pub task_reports: Vec<TaskReport>,
    /// Region size of the initial box and of each frozen box.
    pub region_trace: Vec<f64>,
}

fn seen_accuracy(
    net: &Network,
    params: &[Matrix],
    stream: &TaskStream,
    test: &Dataset,
    seen: usize,
) -> Result<Vec<f64>> {
    (0..seen)
        .map(|j| {
            let d = stream.test_data(j, test);
            if d.is_empty() {
                Ok(f64::NAN)
            } else {
                accuracy_at(net, params, &d)
            }
        })
        .collect()
}

fn row(values: Vec<f64>, n: usize) -> Vec<Option<f64>> {
    let mut r: Vec<Option<f64>> = values.into_iter().map(Some).collect();
    r.resize(n, None);
    r
}

fn last_row_mean(matrix: &[Vec<Option<f64>>]) -> f64 {
    let last: Vec<f64> = matrix
        .last()
        .map(|r| r.iter().flatten().copied().collect())
        .unwrap_or_default();
    if last.is_empty() {
        return f64::NAN;
    }
    last.iter().sum::<f64>() / last.len() as f64
}

fn config_map<T: Serialize>(cfg: &T) -> BTreeMap<String, String> {
    match serde_json::to_value(cfg) {
        Ok(serde_json::Value::Object(m)) => m
            .into_iter()
            .map(|(k, v)| {
                let s = match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                (k, s)
            })
            .collect(),
        _ => BTreeMap::new(),
    }
}

fn check_arch(arch: &Architecture, stream: &TaskStream, train: &Dataset) -> Result<()> {
    if arch.input.len() != train.features.ncols() {
        return Err(Error::Architecture(format!(
            "network expects {} inputs, data has {}",
            arch.input.len(),
            train.features.ncols()
        )));
    }
    if arch.outputs != stream.outputs() {
        return Err(Error::Architecture(format!(
            "{} scenario with this split needs {} outputs, network has {}",
            stream.scenario,
            stream.outputs(),
            arch.outputs
        )));
    }
    let want = stream.scenario.heads(stream.len());
    if arch.heads != want {
        return Err(Error::Architecture(format!(
            "{} scenario needs {want:?} heads",
            stream.scenario
        )));
    }
    Ok(())
}

/// Trains every task of the stream in order with nested boxes.
pub fn run_sequence(
    stream: &TaskStream,
    train: &Dataset,
    test: &Dataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    sink: &mut dyn MetricSink,
) -> Result<(SequenceReport, Checkpoint)> {
    cfg.validate()?;
    check_arch(arch, stream, train)?;
    let (mut net, centers) = Network::initialize(arch.clone(), cfg.seed)?;
    let initial = ParamBox::around(centers, cfg.initial_radius)?;
    let mut state = crate::nn::ReparamState::new(initial.clone(), cfg.nu_reset);
    let n = stream.len();
    let mut boxes = Vec::with_capacity(n);
    let mut accuracy = Vec::with_capacity(n);
    let mut guaranteed_accuracy = Vec::with_capacity(n);
    let mut guarantees = Vec::with_capacity(n);
    let mut task_reports = Vec::with_capacity(n);
    let mut region_trace = vec![initial.region_size()];

    for t in 0..n {
        let data = stream.train_data(t, train);
        let mut sink_err = None;
        let mut observer = |rec: &EpochRecord, net: &Network, state: &crate::nn::ReparamState| {
            if sink_err.is_some() {
                return;
            }
            let result = state
                .realize_centers()
                .and_then(|c| seen_accuracy(net, &c, stream, test, t + 1))
                .and_then(|eval| sink.record(&MetricRecord::from_epoch(rec, eval)));
            if let Err(e) = result {
                sink_err = Some(e);
            }
        };
        let report = train_task(&mut net, &mut state, &data, cfg, t, &mut observer)?;
        if let Some(e) = sink_err {
            return Err(e);
        }
        state = freeze_task(&state, cfg)?;
        let frozen = state.frozen.clone();
        info!(
            "task {t}: train acc {:.4}, guaranteed {:.4}, region {:.6e}, threshold met {}",
            report.train_acc,
            report.guaranteed_acc,
            frozen.region_size(),
            report.threshold_met
        );
        guarantees.push(GuaranteeRecord {
            task: t,
            guaranteed_acc: report.guaranteed_acc,
            acc_thresh: cfg.acc_thresh,
            train_acc: report.train_acc,
            region_size: frozen.region_size(),
            threshold_met: report.threshold_met,
        });
        region_trace.push(frozen.region_size());
        let (acc_row, wc_row) = evaluate_interval_row(&net, &frozen, stream, test, t + 1)?;
        accuracy.push(row(acc_row, n));
        guaranteed_accuracy.push(row(wc_row, n));
        boxes.push(frozen);
        task_reports.push(report);
    }

    let report = SequenceReport {
        method: crate::harness::Method::Interval,
        scenario: stream.scenario,
        average_accuracy: last_row_mean(&accuracy),
        accuracy,
        guaranteed_accuracy,
        guarantees: guarantees.clone(),
        task_reports,
        region_trace,
    };
    let checkpoint = Checkpoint {
        arch: arch.clone(),
        scenario: stream.scenario,
        method: Method::Interval,
        seed: cfg.seed,
        config: config_map(cfg),
        initial,
        boxes,
        heads: net.heads,
        records: guarantees,
    };
    Ok((report, checkpoint))
}

fn evaluate_interval_row(
    net: &Network,
    b: &ParamBox,
    stream: &TaskStream,
    test: &Dataset,
    seen: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut acc = Vec::with_capacity(seen);
    let mut wc = Vec::with_capacity(seen);
    for j in 0..seen {
        let d = stream.test_data(j, test);
        if d.is_empty() {
            acc.push(f64::NAN);
            wc.push(f64::NAN);
            continue;
        }
        let e = evaluate_box(net, b, &d)?;
        acc.push(e.accuracy);
        wc.push(e.guaranteed_accuracy);
    }
    Ok((acc, wc))
}

/// Trains every task in order with unconstrained SGD.
pub fn baseline_sgd_sequence(
    stream: &TaskStream,
    train: &Dataset,
    test: &Dataset,
    arch: &Architecture,
    cfg: &BaselineConfig,
    sink: &mut dyn MetricSink,
) -> Result<(SequenceReport, Checkpoint)> {
    check_arch(arch, stream, train)?;
    let (mut net, mut params) = Network::initialize(arch.clone(), cfg.seed)?;
    let initial = ParamBox::around(params.clone(), 0.0)?;
    let n = stream.len();
    let mut boxes = Vec::with_capacity(n);
    let mut accuracy = Vec::with_capacity(n);
    for t in 0..n {
        let data = stream.train_data(t, train);
        let mut sink_err = None;
        let mut observer = |rec: &EpochRecord, net: &Network, params: &[Matrix]| {
            if sink_err.is_some() {
                return;
            }
            let result = seen_accuracy(net, params, stream, test, t + 1)
                .and_then(|eval| sink.record(&MetricRecord::from_epoch(rec, eval)));
            if let Err(e) = result {
                sink_err = Some(e);
            }
        };
        let report = train_plain(
            &mut net,
            &mut params,
            &data,
            cfg.epochs,
            cfg.batch_size,
            cfg.lr,
            cfg.seed,
            t,
            &mut observer,
        )?;
        if let Some(e) = sink_err {
            return Err(e);
        }
        info!("task {t}: baseline train acc {:.4}", report.train_acc);
        accuracy.push(row(seen_accuracy(&net, &params, stream, test, t + 1)?, n));
        boxes.push(ParamBox::around(params.clone(), 0.0)?);
    }
    let report = SequenceReport {
        method: Method::Sgd,
        scenario: stream.scenario,
        average_accuracy: last_row_mean(&accuracy),
        accuracy,
        guaranteed_accuracy: Vec::new(),
        guarantees: Vec::new(),
        task_reports: Vec::new(),
        region_trace: Vec::new(),
    };
    let checkpoint = Checkpoint {
        arch: arch.clone(),
        scenario: stream.scenario,
        method: Method::Sgd,
        seed: cfg.seed,
        config: config_map(cfg),
        initial,
        boxes,
        heads: net.heads,
        records: Vec::new(),
    };
    Ok((report, checkpoint))
}

/// Accuracy matrix rebuilt from a checkpoint's frozen boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: Vec<Vec<Option<f64>>>,
    pub average_accuracy: f64,
}

/// Recomputes the accuracy matrix of a finished run: row `k` evaluates the
/// centers of the box frozen after task `k` on tasks `0..=k`.
pub fn evaluate_checkpoint(ck: &Checkpoint, stream: &TaskStream, test: &Dataset) -> Result<EvalReport> {
    if ck.boxes.len() > stream.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} tasks but the stream only {}",
            ck.boxes.len(),
            stream.len()
        )));
    }
    let net = Network::with_heads(ck.arch.clone(), ck.heads.clone())?;
    let n = ck.boxes.len();
    let mut accuracy = Vec::with_capacity(n);
    for (k, b) in ck.boxes.iter().enumerate() {
        accuracy.push(row(seen_accuracy(&net, &b.centers(), stream, test, k + 1)?, n));
    }
    Ok(EvalReport {
        average_accuracy: last_row_mean(&accuracy),
        accuracy,
    })
}
