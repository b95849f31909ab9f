//! Dense numeric kernels with hand-written gradients.
//!
//! Everything here is a plain function over borrowed data; the only mutable
//! state is the [`ParamBlock`] updated by [`adam_step`].

pub mod activation;
pub mod conv;
pub mod gradcheck;
pub mod lstm;
pub mod param;
mod tensor;

pub use activation::{
    argmax, dropout, dropout_backward, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, softmax, softmax_cross_entropy, Mode, SoftmaxXent,
};
pub use conv::{conv1d_backward, conv1d_forward, ConvGrads};
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use lstm::{lstm_backward, lstm_forward, LstmCache, LstmGrads};
pub use param::{adam_step, he_init, AdamConfig, ParamBlock};
pub use tensor::Tensor2;
