//! Loss, exact reverse-mode gradients, AdamW and the training loop.

mod backward;
mod gradcheck;
mod loss;
mod optim;
mod train;

pub use backward::{backprop, backward, logit_gradients, loss_and_gradients, sample_loss, Gradients, MaskPenalty};
pub use gradcheck::{grad_check, CheckOptions, Coordinate, CoordinateCheck, GradCheckReport, Objective};
pub use loss::{ce_logit_gradient, ce_loss, mask_penalty, mask_penalty_gradient, LossConfig, LOG_CLAMP};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use train::{
    batch_gradient, evaluate, train, ClassWeights, EpochRecord, LossSettings, ModelConfig, Schedule, StopReason,
    TrainConfig, TrainHistory, TrainOutcome,
};
