//! SIMD routines composed from array instructions: block layouts, in-pixel
//! weight embedding, parallel convolution, pooling, inter-layer shrinking,
//! fully connected products and both summation schemes.
//!
//! Every routine issues its instructions under the array's current
//! component label; callers set the label (see [`PeArray::set_label`]).

mod conv;
mod count;
mod fc;
mod layout;
mod pool;
mod shrink;

use thiserror::Error;

use crate::array::{ArrayError, ArrayGeometry, PeArray};

pub use conv::{broadcast_tap, conv_layer, embed_conv_weights, ConvFilter, ConvRegs, TapRegs};
pub use count::{stack_count, stack_count_columns, StackRegs, STACK_ITERATIONS_FULL};
pub use fc::{
    analog_neuron_sums, digital_neuron_sums, embed_fc_weights, fc_multiply, DigitalRegs,
    FcLayout, FcMode, TernaryFcWeights, NEURONS,
};
pub use layout::{duplicate_input, duplicate_rows};
pub use pool::{maxpool4, relu, PoolRegs, POOL};
pub use shrink::{
    accumulate_feature_maps, arrange_for_fc, digitize, recombine, shrink_and_duplicate,
    ShrinkRegs,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("block {block_w}x{block_h} does not tile a {width}x{height} array")]
    InvalidGrid {
        block_w: usize,
        block_h: usize,
        width: usize,
        height: usize,
    },
    #[error("filter size {k} does not divide block {block_w}x{block_h}")]
    FilterSize {
        k: usize,
        block_w: usize,
        block_h: usize,
    },
    #[error("{count} filters do not fit {capacity} blocks")]
    TooManyFilters { count: usize, capacity: usize },
    #[error("filter {index} has {got} bits, expected {want}")]
    FilterShape {
        index: usize,
        got: usize,
        want: usize,
    },
    #[error("{0}")]
    Layout(String),
    #[error(transparent)]
    Array(#[from] ArrayError),
}

/// A uniform tiling of the array into rectangular computation blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockGrid {
    pub block_w: usize,
    pub block_h: usize,
    pub blocks_x: usize,
    pub blocks_y: usize,
}

impl BlockGrid {
    pub fn new(geometry: ArrayGeometry, block_w: usize, block_h: usize) -> Result<Self, KernelError> {
        let bad = KernelError::InvalidGrid {
            block_w,
            block_h,
            width: geometry.width,
            height: geometry.height,
        };
        if block_w == 0 || block_h == 0 || !geometry.width.is_multiple_of(block_w) || !geometry.height.is_multiple_of(block_h) {
            return Err(bad);
        }
        Ok(Self {
            block_w,
            block_h,
            blocks_x: geometry.width / block_w,
            blocks_y: geometry.height / block_h,
        })
    }

    /// Square blocks of side `side`.
    pub fn square(geometry: ArrayGeometry, side: usize) -> Result<Self, KernelError> {
        Self::new(geometry, side, side)
    }

    pub fn block_count(&self) -> usize {
        self.blocks_x * self.blocks_y
    }

    pub fn width(&self) -> usize {
        self.block_w * self.blocks_x
    }

    pub fn height(&self) -> usize {
        self.block_h * self.blocks_y
    }

    /// Raster index of the block containing PE `(x, y)`.
    pub fn block_of(&self, x: usize, y: usize) -> usize {
        (y / self.block_h) * self.blocks_x + x / self.block_w
    }

    pub(crate) fn check(&self, state: &PeArray) -> Result<(), KernelError> {
        let g = state.geometry();
        if self.width() != g.width || self.height() != g.height {
            return Err(KernelError::InvalidGrid {
                block_w: self.block_w,
                block_h: self.block_h,
                width: g.width,
                height: g.height,
            });
        }
        Ok(())
    }
}
