//! Neural networks whose parameters are boxes rather than points.
//!
//! Every weight and bias is an interval `[c - r, c + r]`. Bounds are pushed
//! through the network with exact interval arithmetic, giving logit bounds
//! that hold for every parameter vector in the box. Training a sequence of
//! tasks confines each task's box to the previous one, so anything the box
//! guaranteed for an earlier task still holds afterwards.
//!
//! Modules, bottom up:
//! - [`interval`]: scalar and tensor interval arithmetic.
//! - [`autograd`]: a small reverse-mode tape over the operations used here.
//! - [`nn`]: architectures, parameter boxes, the nested-box map, checkpoints.
//! - [`training`]: losses, guaranteed accuracy and per-task training.
//! - [`harness`]: task streams, whole-sequence runs and verification.
//! - [`data`]: IDX/CIFAR readers and synthetic blobs.

pub mod autograd;
pub mod data;
pub mod error;
pub mod harness;
pub mod interval;
pub mod nn;
pub mod training;

pub use autograd::{gradcheck, GradBuffer, Matrix, Tape, Var};
pub use data::{Dataset, Split};
pub use error::{Error, Result};
pub use harness::{
    baseline_sgd_sequence, build_stream, run_sequence, verify_guarantees, GuaranteeRecord, Method, SequenceReport,
    TaskStream, VerificationReport,
};
pub use interval::{iv_add, iv_affine, iv_conv2d, iv_dot, iv_monotone, iv_mul, Activation, Interval, IntervalTensor};
pub use nn::{Architecture, Checkpoint, Heads, Network, ParamBox, ReparamState, Scenario};
pub use training::{train_task, TaskData, TaskReport, TrainConfig};
