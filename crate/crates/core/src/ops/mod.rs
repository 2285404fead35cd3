//! Structural operators with hand-written reverse passes.

pub mod conv;
pub(crate) mod geometry;
pub mod grid;
pub mod layers;

pub use conv::{conv_backward, conv_forward, tconv_backward, tconv_forward, ConvGrads, ConvSpec, TConvSpec};
pub use grid::{
    grid_sample, grid_sample_backward, grid_sample_input_grad, interp_upsample, interp_upsample_backward,
    make_base_grid, SampleGrid,
};
