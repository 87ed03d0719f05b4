//! Sparse training engine: configuration, the three pass stages and the training loop.

pub mod config;
pub mod pass;
pub mod trainer;

pub use config::{AblationConfig, LrSchedule, LrStep, SwatMode, TrainConfig};
pub use pass::{backward_pass, forward_pass, parameter_update, ForwardOutput, Gradients, LayerReport, PassOptions};
pub use trainer::{count_correct, evaluate, train_loop, MetricsRecord, StepOutcome, TrainEvent, Trainer};
