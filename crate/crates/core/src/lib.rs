pub mod error;
pub mod estimation;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod pbr;
pub mod scalar;
pub mod seed;
pub mod tensor;
pub mod training;
pub mod unet;
pub mod volume;

pub use error::{Error, FormatError, Result};
pub use scalar::Scalar;
pub use tensor::{Shape4, Tensor4};
pub use unet::{LayerKind, LayerSpec, UNet, UNetConfig};

/// Single-precision tensor used for training and inference.
pub type Tensor = Tensor4<f32>;
/// Single-precision U-Net used by the pipeline.
pub type Net = UNet<f32>;
