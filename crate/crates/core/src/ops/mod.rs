//! Reference forward and backward kernels for every layer kind.

pub mod activation;
pub mod batchnorm;
pub mod conv;
mod kernels;
pub mod linear;
pub mod loss;
pub mod optim;

pub use activation::{
    avgpool_backward, avgpool_forward, maxpool_backward, maxpool_forward, relu_backward, relu_forward,
};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BnGrads, BnMode, BnSaved, RunningStats};
pub use conv::{conv_backward_bias, conv_backward_input, conv_backward_weight, conv_forward, conv_output_shape};
pub use linear::{
    linear_backward, linear_backward_bias, linear_backward_input, linear_backward_weight, linear_forward,
    LinearGrads,
};
pub use loss::softmax_cross_entropy;
pub use optim::{sgd_momentum_update, SgdParams};
