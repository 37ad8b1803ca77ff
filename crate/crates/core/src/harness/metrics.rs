use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::training::{EpochRecord, Phase};

/// One line of the metric stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub task: usize,
    pub phase: Phase,
    pub epoch: usize,
    pub train_acc: f64,
    pub wc_acc: Option<f64>,
    pub wc_loss: Option<f64>,
    pub region_size: f64,
    /// Test accuracy at the current centers on every task seen so far.
    pub eval_acc_per_seen_task: Vec<f64>,
}

impl MetricRecord {
    pub fn from_epoch(r: &EpochRecord, eval_acc_per_seen_task: Vec<f64>) -> Self {
        Self {
            task: r.task,
            phase: r.phase,
            epoch: r.epoch,
            train_acc: r.train_acc,
            wc_acc: r.wc_acc,
            wc_loss: r.wc_loss,
            region_size: r.region_size,
            eval_acc_per_seen_task,
        }
    }
}

/// Receives metric records as training progresses.
pub trait MetricSink {
    fn record(&mut self, rec: &MetricRecord) -> Result<()>;
}

impl MetricSink for Vec<MetricRecord> {
    fn record(&mut self, rec: &MetricRecord) -> Result<()> {
        self.push(rec.clone());
        Ok(())
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl MetricSink for NullSink {
    fn record(&mut self, _: &MetricRecord) -> Result<()> {
        Ok(())
    }
}

/// Writes one JSON object per line and flushes after each, so a crash can
/// only ever truncate the final line.
pub struct JsonlSink<W: Write> {
    out: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> MetricSink for JsonlSink<W> {
    fn record(&mut self, rec: &MetricRecord) -> Result<()> {
        let line = serde_json::to_string(rec).map_err(|e| std::io::Error::other(e.to_string()))?;
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parses a metric stream, skipping a final line that was cut short.
pub fn read_jsonl(text: &str) -> Vec<MetricRecord> {
    text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect()
}
