//! Sparse weight and activation training for convolutional networks.
//!
//! Dense tensor ops with hand-written backward passes, Top-K sparsifiers,
//! per-layer sparsity planning, a three-stage sparse training engine and
//! analytic MAC accounting.

pub mod arch;
pub mod data;
pub mod engine;
pub mod error;
pub mod flops;
pub mod layer;
pub mod network;
pub mod ops;
pub mod plan;
pub mod scalar;
pub mod sparsify;
pub mod tensor;

pub use arch::{ArchNode, Architecture, LayerInfo};
pub use data::{Augment, Dataset};
pub use engine::{
    evaluate, train_loop, AblationConfig, LrSchedule, MetricsRecord, StepOutcome, SwatMode, TrainConfig,
    TrainEvent, Trainer,
};
pub use error::{Result, SwatError};
pub use layer::{BatchNormSpec, ConvSpec, LayerKind, LayerSpec, LinearSpec, PoolSpec};
pub use flops::{BaselineConvention, FlopReport, LayerFlops};
pub use network::{Network, SavedContext};
pub use plan::{PlanOptions, PlanStrategy, SparsityPlan};
pub use scalar::Scalar;
pub use sparsify::{SparsifyReport, ThresholdCache, TopKScope};
pub use tensor::{Shape4, Tensor4};
