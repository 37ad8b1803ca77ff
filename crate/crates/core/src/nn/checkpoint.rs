//! Versioned binary checkpoint.
//!
//! Layout: 8-byte magic, `u32` LE version, `u64` LE header length, a JSON
//! header, then every array as row-major `f64` LE in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::{Architecture, Scenario};
use super::network::Head;
use super::param_box::{BoxTensor, ParamBox};
use crate::autograd::Matrix;
use crate::error::{Error, Result};
use crate::harness::{GuaranteeRecord, Method};

pub const MAGIC: &[u8; 8] = b"NBXCKPT\0";
pub const VERSION: u32 = 1;

/// Everything needed to evaluate or verify a finished task sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub scenario: Scenario,
    pub method: Method,
    pub seed: u64,
    /// Flat key/value settings the run was started with.
    pub config: BTreeMap<String, String>,
    /// Box the first task was confined to.
    pub initial: ParamBox,
    /// Frozen box after each completed task, in task order.
    pub boxes: Vec<ParamBox>,
    pub heads: Vec<Head>,
    pub records: Vec<GuaranteeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: Architecture,
    scenario: Scenario,
    method: Method,
    seed: u64,
    config: BTreeMap<String, String>,
    tasks: usize,
    records: Vec<GuaranteeRecord>,
    arrays: Vec<ArrayEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// The most recently frozen box, or the initial box before any task.
    pub fn final_box(&self) -> &ParamBox {
        self.boxes.last().unwrap_or(&self.initial)
    }

    fn arrays(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        let boxes = std::iter::once(("initial".to_string(), &self.initial))
            .chain(self.boxes.iter().enumerate().map(|(i, b)| (format!("task{i}"), b)));
        for (prefix, b) in boxes {
            for (k, t) in b.tensors.iter().enumerate() {
                out.push((format!("{prefix}/{k}/center"), &t.center));
                out.push((format!("{prefix}/{k}/radius"), &t.radius));
            }
        }
        for (h, head) in self.heads.iter().enumerate() {
            out.push((format!("head{h}/w"), &head.w));
            out.push((format!("head{h}/b"), &head.b));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arrays = self.arrays();
        let header = Header {
            arch: self.arch.clone(),
            scenario: self.scenario,
            method: self.method,
            seed: self.seed,
            config: self.config.clone(),
            tasks: self.boxes.len(),
            records: self.records.clone(),
            arrays: arrays
                .iter()
                .map(|(name, m)| ArrayEntry {
                    name: name.clone(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        let payload: usize = arrays.iter().map(|(_, m)| m.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in arrays {
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
        let mut data = &body[hlen..];
        let mut arrays: BTreeMap<String, Matrix> = BTreeMap::new();
        for entry in &header.arrays {
            let n = entry.rows * entry.cols;
            if data.len() < n * 8 {
                return Err(bad(format!("truncated array `{}`", entry.name)));
            }
            let values = data[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[n * 8..];
            let m = Matrix::from_shape_vec((entry.rows, entry.cols), values).expect("length checked");
            arrays.insert(entry.name.clone(), m);
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after arrays"));
        }

        let plan = header.arch.plan()?;
        let mut take = |name: String| {
            arrays
                .remove(&name)
                .ok_or_else(|| bad(format!("missing array `{name}`")))
        };
        let mut read_box = |prefix: &str| -> Result<ParamBox> {
            let mut tensors = Vec::with_capacity(plan.shapes.len());
            for (k, &shape) in plan.shapes.iter().enumerate() {
                let center = take(format!("{prefix}/{k}/center"))?;
                let radius = take(format!("{prefix}/{k}/radius"))?;
                if center.dim() != shape {
                    return Err(bad(format!(
                        "array `{prefix}/{k}` has shape {:?}, expected {shape:?}",
                        center.dim()
                    )));
                }
                tensors.push(BoxTensor::new(center, radius)?);
            }
            Ok(ParamBox::new(tensors))
        };
        let initial = read_box("initial")?;
        let boxes = (0..header.tasks)
            .map(|i| read_box(&format!("task{i}")))
            .collect::<Result<Vec<_>>>()?;
        let n_heads = match header.arch.heads {
            super::arch::Heads::Shared => 0,
            super::arch::Heads::PerTask(n) => n,
        };
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let w = take(format!("head{h}/w"))?;
            let b = take(format!("head{h}/b"))?;
            if w.dim() != (header.arch.outputs, plan.features) || b.dim() != (1, header.arch.outputs) {
                return Err(bad(format!("head {h} has the wrong shape")));
            }
            heads.push(super::network::Head { w, b });
        }
        if let Some(name) = arrays.keys().next() {
            return Err(bad(format!("unexpected array `{name}`")));
        }
        Ok(Self {
            arch: header.arch,
            scenario: header.scenario,
            method: header.method,
            seed: header.seed,
            config: header.config,
            initial,
            boxes,
            heads,
            records: header.records,
        })
    }

    /// Writes to a temporary sibling and renames it into place, so readers
    /// never observe a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = std::path::PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::Heads;
    use crate::nn::network::Network;

    fn sample() -> Checkpoint {
        let arch = Architecture::mlp(4, &[3], 2, Heads::PerTask(2));
        let (net, centers) = Network::initialize(arch.clone(), 1).unwrap();
        let initial = ParamBox::around(centers, 1.0).unwrap();
        let mut second = initial.clone();
        second.tensors[0].radius *= 0.5;
        Checkpoint {
            arch,
            scenario: Scenario::IncrementalTask,
            method: Method::Interval,
            seed: 1,
            config: BTreeMap::from([("acc_thresh".into(), "0.9".into())]),
            initial: initial.clone(),
            boxes: vec![initial, second],
            heads: net.heads,
            records: vec![GuaranteeRecord {
                task: 0,
                guaranteed_acc: 0.5,
                acc_thresh: 0.9,
                train_acc: 0.75,
                region_size: 3.5,
                threshold_met: true,
            }],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_unknown_version_and_truncation() {
        let mut bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[8] = 9;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 9"));
        assert!(Checkpoint::from_bytes(b"not a checkpoint at all").is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(!dir.path().join("run.ckpt.partial").exists());
    }
}
