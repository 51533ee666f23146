//! Network descriptions, the weight file format, and the compiler that
//! lowers a network onto the array as an ordered kernel schedule.

mod plan;
mod timing;
mod weights;

use std::fmt;

use thiserror::Error;

use crate::array::{ArrayError, ArrayGeometry};
use crate::kernels::{BlockGrid, KernelError, NEURONS, POOL};

pub use plan::{compile, infer, Inference, InferencePlan, Stage, StageKind};
pub use timing::{
    fit_costs, reference_trace, COST_FIT_RIDGE, HARDWARE_THREE_LAYER_FC_US, HARDWARE_TWO_LAYER_TOTAL_US,
    HARDWARE_TWO_LAYER_US,
};
pub use weights::{parse, serialize, ParseError, QuantizedWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// 32×32 input, one conv layer (64 maps), 4×4 max pool, ternary FC.
    TwoLayer,
    /// 64×64 input, conv (16 maps), pool, 3-bit shrink, conv (16 maps), FC.
    ThreeLayer,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::TwoLayer => "TWO_LAYER",
            Preset::ThreeLayer => "THREE_LAYER",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "TWO_LAYER" => Some(Preset::TwoLayer),
            "THREE_LAYER" => Some(Preset::ThreeLayer),
            _ => None,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Summation {
    /// Analog global sums, each the mean of `repeats` readings.
    AnalogAvg { repeats: usize },
    /// Exact stack counts of `bits`-bit product magnitudes over `[0, range_max]`.
    DigitalStack { bits: usize, range_max: f64 },
}

/// Bits and range of the inter-layer shrink stage. Binary input bounds
/// first-layer responses by k² = 16.
pub const SHRINK_BITS: usize = 3;
pub const SHRINK_RANGE: f64 = 16.0;

/// Default range of the digital FC summation. Second-layer values are
/// multiples of 16/7; with 15 levels over 240 the step is 16 and no value
/// lands exactly on a rounding boundary.
pub const DIGITAL_RANGE: f64 = 240.0;
pub const DIGITAL_BITS: usize = 4;
pub const ANALOG_REPEATS: usize = 16;

/// Description of one network on one array.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub preset: Preset,
    pub geometry: ArrayGeometry,
    /// Side of the (square) input image, which is also the first block size.
    pub input_side: usize,
    /// Filter size of every conv layer.
    pub k: usize,
    /// Feature maps produced by each conv layer.
    pub maps: Vec<usize>,
    pub summation: Summation,
}

impl NetworkSpec {
    pub fn two_layer() -> Self {
        Self {
            preset: Preset::TwoLayer,
            geometry: ArrayGeometry::DEFAULT,
            input_side: 32,
            k: 4,
            maps: vec![64],
            summation: Summation::AnalogAvg {
                repeats: ANALOG_REPEATS,
            },
        }
    }

    pub fn three_layer() -> Self {
        Self {
            preset: Preset::ThreeLayer,
            geometry: ArrayGeometry::DEFAULT,
            input_side: 64,
            k: 4,
            maps: vec![16, 16],
            summation: Summation::DigitalStack {
                bits: DIGITAL_BITS,
                range_max: DIGITAL_RANGE,
            },
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::TwoLayer => Self::two_layer(),
            Preset::ThreeLayer => Self::three_layer(),
        }
    }

    /// Filters stored for conv layer `layer`: one per block. The second
    /// layer of the three-layer net holds one filter per (input, output)
    /// map pair, index `input · maps + output`.
    pub fn filter_count(&self, layer: usize) -> usize {
        match (self.preset, layer) {
            (Preset::ThreeLayer, 1) => self.maps[0] * self.maps[1],
            _ => self.maps[layer],
        }
    }

    /// Length of the FC input vector.
    pub fn fc_inputs(&self) -> usize {
        let s = self.input_side;
        match self.preset {
            Preset::TwoLayer => self.maps[0] * (s / POOL) * (s / POOL),
            Preset::ThreeLayer => self.maps[1] * (s / POOL) * (s / POOL),
        }
    }
}

/// One failed layout check.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct Diagnostic(pub String);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("invalid network: {}", join(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("weights do not match the network: {0}")]
    WeightShape(String),
    #[error("input image must be {side}x{side} with values 0 or 1")]
    BadImage { side: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Array(#[from] ArrayError),
}

fn join(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.0.as_str()).collect::<Vec<_>>().join("; ")
}

/// Block grids a valid spec compiles to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grids {
    /// Grid of the first conv layer (one block per filter).
    pub first: BlockGrid,
    /// Grid of the second conv layer and of the FC activations (three-layer).
    pub second: Option<BlockGrid>,
}

/// Checks divisibility, capacity and FC layout constraints.
pub fn validate(spec: &NetworkSpec) -> Result<Grids, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut err = |s: String| diags.push(Diagnostic(s));
    let g = spec.geometry;
    let s = spec.input_side;
    let want_layers = match spec.preset {
        Preset::TwoLayer => 1,
        Preset::ThreeLayer => 2,
    };
    if spec.maps.len() != want_layers {
        err(format!(
            "{} needs {want_layers} conv layer(s), got {}",
            spec.preset,
            spec.maps.len()
        ));
    }
    if spec.maps.contains(&0) {
        err("a conv layer has zero filters".into());
    }
    if s == 0 || !g.width.is_multiple_of(s) || !g.height.is_multiple_of(s) {
        err(format!(
            "block {s} does not tile the {}x{} array",
            g.width, g.height
        ));
    }
    if spec.k == 0 || !s.is_multiple_of(spec.k) {
        err(format!("filter size {} does not divide block {s}", spec.k));
    }
    if !s.is_multiple_of(POOL) {
        err(format!("block {s} is not a multiple of the pool size {POOL}"));
    }
    match spec.summation {
        Summation::AnalogAvg { repeats: 0 } => {
            err("analog summation needs at least one repeat".into())
        }
        Summation::DigitalStack { bits, range_max }
            if !(1..=4).contains(&bits) || !(range_max.is_finite() && range_max > 0.0) =>
        {
            err(format!("digital summation with {bits} bits over {range_max} is invalid"))
        }
        _ => {}
    }
    if !diags.is_empty() {
        return Err(diags);
    }
    let first = match BlockGrid::square(g, s) {
        Ok(grid) => grid,
        Err(e) => return Err(vec![Diagnostic(e.to_string())]),
    };
    if spec.maps[0] > first.block_count() {
        diags.push(Diagnostic(format!(
            "{} filters do not fit {} blocks",
            spec.maps[0],
            first.block_count()
        )));
    }
    let second = match spec.preset {
        Preset::TwoLayer => {
            if NEURONS > POOL * POOL {
                diags.push(Diagnostic("pooled tiles cannot host every neuron".into()));
            }
            None
        }
        Preset::ThreeLayer => {
            let side = s / POOL;
            let maps = spec.maps[0];
            let grid = BlockGrid::square(g, side).ok();
            match grid {
                None => diags.push(Diagnostic(format!("shrunk block {side} does not tile the array"))),
                Some(grid) => {
                    if first.blocks_x != POOL || maps != first.block_count() {
                        diags.push(Diagnostic(format!(
                            "shrinking needs {POOL} block columns fully used, got {}x{} blocks for {maps} maps",
                            first.blocks_x, first.blocks_y
                        )));
                    }
                    if grid.blocks_y != maps {
                        diags.push(Diagnostic(format!(
                            "{maps} input maps need {maps} block rows, grid has {}",
                            grid.blocks_y
                        )));
                    }
                    if spec.maps[1] != grid.blocks_x {
                        diags.push(Diagnostic(format!(
                            "{} output maps need {} block columns",
                            spec.maps[1], grid.blocks_x
                        )));
                    }
                    if !side.is_multiple_of(spec.k) {
                        diags.push(Diagnostic(format!(
                            "filter size {} does not divide shrunk block {side}",
                            spec.k
                        )));
                    }
                    let r = (1..=grid.blocks_x).find(|r| r * r >= grid.blocks_x).unwrap_or(1);
                    let regions = (grid.blocks_x / r.max(1)) * (grid.blocks_y / r.max(1));
                    if r * r != grid.blocks_x || regions < NEURONS {
                        diags.push(Diagnostic(format!(
                            "FC regions cannot host {NEURONS} neurons"
                        )));
                    }
                }
            }
            grid
        }
    };
    if diags.is_empty() {
        Ok(Grids { first, second })
    } else {
        Err(diags)
    }
}
