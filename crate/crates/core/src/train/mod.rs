//! Surrogate and classifier pretraining, end-to-end encoder optimization
//! through the frozen networks, and the no-encoder baselines.

mod fit;
mod infer;
mod nets;
mod pipeline;
mod stages;

pub use fit::{fit, logs_csv, mean_loss, EpochLog, Fitted, Goal, Trainable};
pub use infer::{classify, encode, gather, image_batch, logits, render_percepts, surrogate_percepts};
pub use nets::{classifier_checkpoint, load_classifier, Bindings, Encoder, Surrogate};
pub use pipeline::*;
pub use stages::{
    encoder_loss, pretrain_classifier, pretrain_surrogate, train_encoder, Frozen, TrainConfig, TrainOutcome,
    CHECKPOINT_FILE, LOG_FILE,
};
