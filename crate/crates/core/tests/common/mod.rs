#![allow(dead_code)]

use nestbox_core::data::synth_blobs;
use nestbox_core::nn::{InputShape, Layer};
use nestbox_core::{Activation, Architecture, Dataset, Heads, Matrix, ParamBox, Split};
use rand::Rng;

/// A small dense network: 1 to 3 layers, widths up to `max_width`.
pub fn random_mlp<R: Rng>(rng: &mut R, max_width: usize) -> Architecture {
    let inputs = rng.random_range(1..=8);
    let hidden = rng.random_range(0..=2);
    let acts = [Activation::Relu, Activation::Tanh, Activation::Sigmoid];
    let mut layers = Vec::new();
    for _ in 0..hidden {
        layers.push(Layer::Dense {
            units: rng.random_range(1..=max_width),
        });
        layers.push(Layer::Activation {
            function: acts[rng.random_range(0..acts.len())],
        });
    }
    Architecture {
        input: InputShape::flat(inputs),
        layers,
        outputs: rng.random_range(2..=5),
        heads: Heads::Shared,
    }
}

/// Random centers in `[-1, 1]` and radii in `[0, max_radius]`.
pub fn random_box<R: Rng>(rng: &mut R, arch: &Architecture, max_radius: f64) -> ParamBox {
    let plan = arch.plan().unwrap();
    let centers: Vec<Matrix> = plan
        .shapes
        .iter()
        .map(|&(r, c)| Matrix::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let mut b = ParamBox::around(centers, 0.0).unwrap();
    for t in &mut b.tensors {
        t.radius.mapv_inplace(|_| rng.random_range(0.0..max_radius));
    }
    b
}

pub fn random_inputs<R: Rng>(rng: &mut R, n: usize, d: usize) -> Matrix {
    Matrix::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}

/// Six well separated blob classes in 8 dimensions.
pub fn blobs(per_class: usize, seed: u64) -> (Dataset, Dataset) {
    (
        synth_blobs(6, per_class, 8, 4.0, seed, Split::Train).unwrap(),
        synth_blobs(6, per_class / 2 + 1, 8, 4.0, seed, Split::Test).unwrap(),
    )
}

use nestbox_core::harness::NullSink;
use nestbox_core::{build_stream, run_sequence, Checkpoint, Scenario, SequenceReport, TaskStream, TrainConfig};

/// Settings that train the blob streams in well under a second.
pub fn blob_config() -> TrainConfig {
    TrainConfig {
        center_epochs: 20,
        radii_epochs: 40,
        batch_size: 64,
        lr_center: 0.5,
        lr_radii: 100.0,
        acc_thresh: 0.9,
        initial_radius: 1.0,
        running_window: 4,
        nu_reset: 5.0,
        seed: 0,
    }
}

pub fn blob_stream(train: &Dataset, test: &Dataset, scenario: Scenario, n_tasks: usize) -> TaskStream {
    build_stream(train, test, scenario, n_tasks, 2, 0).unwrap()
}

pub fn blob_arch(stream: &TaskStream, hidden: usize) -> Architecture {
    Architecture::mlp(8, &[hidden], stream.outputs(), stream.scenario.heads(stream.len()))
}

/// Trains a blob stream with `cfg`.
pub fn run_blobs(
    scenario: Scenario,
    n_tasks: usize,
    cfg: &TrainConfig,
) -> (SequenceReport, Checkpoint, TaskStream, Dataset) {
    let (train, test) = if n_tasks > 3 {
        (
            synth_blobs(2 * n_tasks, 150, 8, 4.0, 1, Split::Train).unwrap(),
            synth_blobs(2 * n_tasks, 50, 8, 4.0, 1, Split::Test).unwrap(),
        )
    } else {
        blobs(200, 0)
    };
    let stream = blob_stream(&train, &test, scenario, n_tasks);
    let arch = blob_arch(&stream, 32);
    let (report, ck) = run_sequence(&stream, &train, &test, &arch, cfg, &mut NullSink).unwrap();
    (report, ck, stream, train)
}
