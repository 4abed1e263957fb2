//! A small reverse-mode differentiation engine in 32-bit arithmetic and the
//! U-Net family built on it.
//!
//! Only the layers the networks need are provided: strided convolution and
//! its transpose, batch normalization, eLU, addition, channel concatenation,
//! channel bias and the mean squared error loss. Convolutions are lowered to
//! matrix products with im2col; batch samples are processed in parallel when
//! the `parallel` feature is enabled.

pub mod adam;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod tape;
pub mod tensor;
pub mod unet;
pub mod weights;

pub use adam::{Adam, StepOutcome};
pub use conv::ConvSpec;
pub use error::{NnError, Result};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use tape::{BatchStats, BnMode, Tape, Var};
pub use tensor::Tensor4;
pub use unet::{Encoder, FeatureStack, LedgerEntry, Mode, UNet, UNetConfig};
pub use weights::{Bound, Gradients, NetworkWeights, Param, ParamKind, BN_MOMENTUM};
