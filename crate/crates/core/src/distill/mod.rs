//! Distillation from precomputed teacher logits combined with
//! pseudo-labeling of unlabeled sentences.

mod config;
mod loss;
mod teacher;
mod train;

pub use config::{DistillConfig, MixStrategy};
pub use loss::{
    combined_loss, distillation_loss, distillation_loss_value, emission_input, pseudo_labels, task_loss,
    task_loss_value, Example, LossBreakdown,
};
pub use teacher::{TeacherHeader, TeacherLogits, TeacherStore, TEACHER_FORMAT_VERSION};
pub use train::{
    train_baseline, train_distilled, BatchLog, EpochLoss, Observer, TrainOutcome, TrainReport, TrainSetup,
};
