//! Deformable transposed convolution (DTC) upsampling for 2D and 3D feature
//! maps, with hand-written reverse passes, a finite-difference oracle, a
//! miniature U-Net, synthetic datasets and the training loop around them.

pub mod data;
pub mod dtc;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod par;
pub mod rng;
pub mod scalar;
pub mod segnet;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::{Shape, Tensor};
