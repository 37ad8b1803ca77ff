//! Datasets: IDX and CIFAR binary readers plus seeded synthetic blobs.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::Matrix;
use crate::error::{Error, Result};
use crate::nn::InputShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Features in `[0, 1]`, one example per row, with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub shape: InputShape,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize, shape: InputShape, split: Split) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Format(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.ncols() != shape.len() {
            return Err(Error::shape("dataset features", &[shape.len()], &[features.ncols()]));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if features.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Format("feature values must lie in [0, 1]".into()));
        }
        Ok(Self {
            features,
            labels,
            classes,
            shape,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row indices of every example whose label is in `classes`, in order.
    pub fn indices_of(&self, classes: &[usize]) -> Vec<usize> {
        (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect()
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// Parses an unsigned-byte IDX payload, returning its dimensions and data.
fn parse_idx<'a>(bytes: &'a [u8], what: &str) -> Result<(Vec<usize>, &'a [u8])> {
    let magic = read_u32(bytes, 0)?;
    if magic >> 8 != 0x08 {
        return Err(Error::Format(format!("{what}: bad IDX magic {magic:#010x}")));
    }
    let ndims = (magic & 0xff) as usize;
    if ndims == 0 {
        return Err(Error::Format(format!("{what}: IDX file with no dimensions")));
    }
    let dims = (0..ndims)
        .map(|k| read_u32(bytes, 4 + 4 * k).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndims;
    let len: usize = dims.iter().product();
    let data = &bytes[start.min(bytes.len())..];
    if data.len() < len {
        return Err(Error::Format(format!(
            "{what}: truncated IDX data ({} of {len} bytes)",
            data.len()
        )));
    }
    if data.len() > len {
        return Err(Error::Format(format!(
            "{what}: {} bytes after the IDX data",
            data.len() - len
        )));
    }
    Ok((dims, data))
}

/// Parses in-memory IDX images and labels.
pub fn parse_idx_pair(images: &[u8], labels: &[u8], split: Split) -> Result<Dataset> {
    let (idims, pixels) = parse_idx(images, "images")?;
    let (ldims, lbytes) = parse_idx(labels, "labels")?;
    if read_u32(images, 0)? & 0xff < 2 {
        return Err(Error::Format("images: expected at least two dimensions".into()));
    }
    if read_u32(labels, 0)? != 0x0801 {
        return Err(Error::Format("labels: expected magic 0x00000801".into()));
    }
    let n = idims[0];
    if ldims[0] != n {
        return Err(Error::Format(format!("{n} images but {} labels", ldims[0])));
    }
    let shape = match idims[1..] {
        [w] => InputShape::flat(w),
        [h, w] => InputShape {
            channels: 1,
            height: h,
            width: w,
        },
        [c, h, w] => InputShape {
            channels: c,
            height: h,
            width: w,
        },
        _ => return Err(Error::Format("images: unsupported dimensionality".into())),
    };
    let d = shape.len();
    let features = Matrix::from_shape_fn((n, d), |(i, j)| f64::from(pixels[i * d + j]) / 255.0);
    let labels: Vec<usize> = lbytes.iter().map(|&b| usize::from(b)).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, classes, shape, split)
}

/// Reads an IDX image file and its label file, scaling pixels by `1/255`.
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let img = fs::read(images).map_err(|e| io_context(e, images))?;
    let lab = fs::read(labels).map_err(|e| io_context(e, labels))?;
    parse_idx_pair(&img, &lab, split)
}

fn io_context(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Encodes unsigned bytes as an IDX file body.
pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + data.len());
    out.extend_from_slice(&(0x0800u32 | dims.len() as u32).to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Writes a dataset as an IDX image/label pair, quantizing features to bytes.
pub fn write_idx(ds: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    if ds.classes > 256 {
        return Err(Error::Format("IDX labels hold at most 256 classes".into()));
    }
    let pixels: Vec<u8> = ds.features.iter().map(|&v| (v * 255.0).round() as u8).collect();
    let s = ds.shape;
    let dims = if s.channels == 1 {
        vec![ds.len(), s.height, s.width]
    } else {
        vec![ds.len(), s.channels, s.height, s.width]
    };
    fs::write(images, encode_idx(&dims, &pixels))?;
    let lab: Vec<u8> = ds.labels.iter().map(|&y| y as u8).collect();
    fs::write(labels, encode_idx(&[ds.len()], &lab))?;
    Ok(())
}

/// Reads CIFAR-10 style binary batches: one label byte then 3x32x32 pixels
/// per record. `label_bytes = 2` reads the CIFAR-100 layout and keeps the
/// fine label.
pub fn load_cifar_binary(paths: &[&Path], label_bytes: usize, split: Split) -> Result<Dataset> {
    const PIXELS: usize = 3 * 32 * 32;
    if !(1..=2).contains(&label_bytes) {
        return Err(Error::Format("CIFAR records carry one or two label bytes".into()));
    }
    let record = label_bytes + PIXELS;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = fs::read(path).map_err(|e| io_context(e, path))?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::Format(format!(
                "{}: not a whole number of records",
                path.display()
            )));
        }
        for rec in bytes.chunks_exact(record) {
            labels.push(usize::from(rec[label_bytes - 1]));
            features.extend(rec[label_bytes..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    let n = labels.len();
    let features = Matrix::from_shape_vec((n, PIXELS), features).expect("whole records");
    let classes = if label_bytes == 1 { 10 } else { 100 };
    let shape = InputShape {
        channels: 3,
        height: 32,
        width: 32,
    };
    Dataset::new(features, labels, classes, shape, split)
}

/// Gaussian blobs around seeded random centers in `[0.1, 0.9]^d`.
///
/// Centers are drawn at least `0.25` apart where possible and the noise
/// standard deviation is `0.125 / separation`, so every center sits at least
/// `separation` standard deviations from the bisector of any two centers.
/// Values are clipped to `[0, 1]`. Examples are grouped by class.
pub fn synth_blobs(
    n_classes: usize,
    n_per_class: usize,
    d: usize,
    separation: f64,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    if n_classes == 0 || n_per_class == 0 || d == 0 {
        return Err(Error::EmptyDataset(format!(
            "blobs with {n_classes} classes x {n_per_class} examples in {d} dimensions"
        )));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(Error::Config("blob separation must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..1000 {
            let c: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..0.9)).collect();
            let gap = centers
                .iter()
                .map(|o| o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            if gap >= 0.25 {
                best = Some((gap, c));
                break;
            }
            if best.as_ref().is_none_or(|(g, _)| gap > *g) {
                best = Some((gap, c));
            }
        }
        centers.push(best.expect("at least one draw").1);
    }
    // Noise comes from a separate stream so that centers do not depend on
    // the number of examples, and train and test draws differ.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(match split {
        Split::Train => 1,
        Split::Test => 2,
    });
    let normal = Normal::new(0.0, 0.125 / separation).map_err(|e| Error::Config(e.to_string()))?;
    let n = n_classes * n_per_class;
    let mut features = Matrix::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (k, c) in centers.iter().enumerate() {
        for i in 0..n_per_class {
            let row = k * n_per_class + i;
            for j in 0..d {
                features[[row, j]] = (c[j] + normal.sample(&mut noise_rng)).clamp(0.0, 1.0);
            }
            labels.push(k);
        }
    }
    Dataset::new(features, labels, n_classes, InputShape::flat(d), split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_images() {
        let pixels: Vec<u8> = (0..2 * 28 * 28).map(|i| (i % 256) as u8).collect();
        let images = encode_idx(&[2, 28, 28], &pixels);
        assert_eq!(&images[..4], &[0, 0, 8, 3]);
        let labels = encode_idx(&[2], &[7, 1]);
        assert_eq!(&labels[..4], &[0, 0, 8, 1]);
        let ds = parse_idx_pair(&images, &labels, Split::Train).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!((ds.shape.height, ds.shape.width), (28, 28));
        assert_eq!(ds.labels, vec![7, 1]);
        assert_eq!(ds.features[[0, 255]], 1.0);
        assert_eq!(ds.features[[0, 1]], 1.0 / 255.0);
    }

    #[test]
    fn rejects_bad_files() {
        let images = encode_idx(&[2, 2, 2], &[0; 8]);
        let labels = encode_idx(&[2], &[0, 1]);
        let mut wrong = images.clone();
        wrong[2] = 9;
        assert!(matches!(
            parse_idx_pair(&wrong, &labels, Split::Train),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_idx_pair(&images[..10], &labels, Split::Train),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            parse_idx_pair(&images[..images.len() - 1], &labels, Split::Train),
            Err(Error::Format(_))
        ));
        let three = encode_idx(&[3], &[0, 1, 1]);
        let err = parse_idx_pair(&images, &three, Split::Train).unwrap_err();
        assert!(err.to_string().contains("2 images but 3 labels"));
        assert!(parse_idx_pair(&labels, &labels, Split::Train).is_err());
    }

    #[test]
    fn blobs_are_deterministic_and_bounded() {
        let a = synth_blobs(3, 20, 4, 5.0, 9, Split::Train).unwrap();
        let b = synth_blobs(3, 20, 4, 5.0, 9, Split::Train).unwrap();
        assert_eq!(a, b);
        assert!(a.features.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.indices_of(&[1]), (20..40).collect::<Vec<_>>());
        assert!(matches!(
            synth_blobs(2, 0, 2, 1.0, 0, Split::Train),
            Err(Error::EmptyDataset(_))
        ));
    }
}
