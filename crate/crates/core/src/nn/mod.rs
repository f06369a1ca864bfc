//! Minimal CPU tensor engine: NCHW `f32` feature maps, layers with explicit
//! backward passes, and named parameters.

pub mod activation;
pub mod conv;
pub(crate) mod direct;
pub mod gemm;
pub mod norm;
pub mod param;
pub mod tensor;
pub mod upsample;

pub use activation::{ActLayer, Activation};
pub use conv::Conv2d;
pub use norm::BatchNorm2d;
pub use param::{Module, Param};
pub use tensor::Tensor;
pub use upsample::{bilinear_upsample, bilinear_upsample_backward};
