//! Tabular regressor for city-level FDI prediction from judicial
//! performance indicators.
//!
//! The model fuses per-sample row encodings with per-column encodings,
//! refines them through transformer layers whose attention combines an
//! additive and a multiplicative operator, and predicts through a
//! four-expert mixture gated on the CLS embedding. Everything runs on a
//! small reverse-mode autodiff tape over dense f64 tensors, with a
//! finite-difference gradient checker, deterministic seeded training, and
//! a binary checkpoint format.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod moe;
pub mod params;
pub mod report;
pub mod tape;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use metrics::{compute_metrics, MetricsReport};
pub use model::{Ablation, ModelConfig, Prediction, TargetTransform, TljdModel};
pub use params::ParamStore;
pub use tape::{bind_params, forward_backward, forward_only, Tape, ValueId};
pub use tensor::Tensor;
pub use train::{evaluate, loss_er, loss_joint, loss_reg, train, TrainConfig, TrainOutcome};
