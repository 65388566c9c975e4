//! Network engine: convolution, activation, pooling and upsampling
//! primitives with exact hand-written backward passes, the encoder-decoder
//! network built from them, the optimizer, and a finite-difference
//! verification harness.

mod gradcheck;
mod ops;
mod optim;
mod unet;

pub use gradcheck::grad_check;
pub use ops::{
    concat_channels, conv2d, conv2d_backward, l1_loss, leaky_relu, leaky_relu_backward,
    maxpool2, maxpool2_backward, split_channels, transpose_conv2, transpose_conv2_backward,
};
pub use optim::{adam_step, AdamParams, OptimState};
pub use unet::{unet_backward, unet_forward, ConvBlock, UNetCache, UNetConfig, UNetParams};
