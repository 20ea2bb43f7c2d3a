//! Neural kernels with hand-written backward passes, plus Adam.

mod adam;
mod gemm;
mod layers;
mod sequential;
mod tensor;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub(crate) use gemm::{gemm, Mat};
pub use layers::{
    channel_norm_backward, channel_norm_forward, conv2d_backward, conv2d_forward, dense_backward, dense_forward,
    nn_upsample2x_backward, nn_upsample2x_forward, relu, relu_backward, sigmoid, sigmoid_backward, ConvParams,
    DenseParams, Layer, LayerSpec, NormParams, NORM_EPS,
};
pub use sequential::Sequential;
pub use tensor::Tensor;
