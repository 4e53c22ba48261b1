//! Deterministic differentiable kernels: convolution, transposed
//! convolution, max pooling, activations, channel concatenation, the Dice
//! loss and the SGD/Adam optimizers.
//!
//! Every kernel is a pure function of its inputs with an explicit gradient
//! pass; there is no autodiff graph. Work is split across rayon threads in
//! fixed blocks so results are bit-identical for any thread count.

mod activation;
pub mod checkpoint;
mod concat;
mod conv;
pub(crate) mod gemm;
mod loss;
mod optim;
mod param;
mod pool;
mod transposed;

pub use activation::Activation;
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_backward, conv_out_size, ConvGrads};
pub use loss::{dice_loss, dice_loss_with_grad, DICE_SMOOTHING};
pub use optim::{AdamConfig, Optimizer, OptimizerKind};
pub use param::Param;
pub use pool::{maxpool2x2, maxpool2x2_backward, Pooled};
pub use transposed::{transposed_conv2d, transposed_conv2d_backward};
