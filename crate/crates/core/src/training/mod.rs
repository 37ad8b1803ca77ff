//! Losses, guaranteed accuracy and the per-task training procedure.

mod config;
mod losses;
mod task;

pub use config::{RunningStats, TrainConfig};
pub use losses::{
    accuracy_at, correct_count, cross_entropy, evaluate_box, guaranteed_count, is_guaranteed, label_mask,
    loss_and_accuracy_at, worst_case_accuracy, worst_case_batch, worst_case_logits, worst_case_loss, BoxEvaluation,
    TaskData,
};
pub use task::{freeze_task, sgd_step, train_plain, train_task, EpochRecord, Phase, PlainReport, TaskReport};
