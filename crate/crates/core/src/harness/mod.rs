//! Task streams, sequential runs, guarantee verification and metrics.

mod metrics;
mod sequence;
mod stream;
mod verify;

pub use metrics::{read_jsonl, JsonlSink, MetricRecord, MetricSink, NullSink};
pub use sequence::{
    baseline_sgd_sequence, evaluate_checkpoint, run_sequence, BaselineConfig, EvalReport, GuaranteeRecord, Method,
    SequenceReport,
};
pub use stream::{build_stream, Task, TaskStream};
pub use verify::{verify_guarantees, TaskVerification, VerificationReport, Violation};
