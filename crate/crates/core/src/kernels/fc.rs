//! Ternary fully connected layer: in-pixel weight layouts, the parallel
//! multiply, and analog or digital per-neuron summation.

use super::count::{stack_count_columns, StackRegs};
use super::pool::POOL;
use super::{BlockGrid, KernelError};
use crate::array::{AReg, AnalogPlane, BitOp, DReg, FlagPredicate, MaskPattern, PeArray};
use crate::quant;

/// Output neurons (digit classes).
pub const NEURONS: usize = 10;

/// Ternary weight matrix, one row per neuron, columns in canonical
/// activation order (map, then row, then column).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TernaryFcWeights {
    inputs: usize,
    values: Vec<i8>,
}

impl TernaryFcWeights {
    pub fn zeros(inputs: usize) -> Self {
        Self {
            inputs,
            values: vec![0; NEURONS * inputs],
        }
    }

    /// Row-major `NEURONS × inputs` values; `None` on a wrong length or an
    /// entry outside {−1, 0, 1}.
    pub fn new(inputs: usize, values: Vec<i8>) -> Option<Self> {
        (values.len() == NEURONS * inputs && values.iter().all(|v| (-1..=1).contains(v)))
            .then_some(Self { inputs, values })
    }

    pub fn from_fn(inputs: usize, mut f: impl FnMut(usize, usize) -> i8) -> Option<Self> {
        let values = (0..NEURONS * inputs).map(|i| f(i / inputs, i % inputs)).collect();
        Self::new(inputs, values)
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn get(&self, neuron: usize, input: usize) -> i8 {
        self.values[neuron * self.inputs + input]
    }

    pub fn row(&self, neuron: usize) -> &[i8] {
        &self.values[neuron * self.inputs..(neuron + 1) * self.inputs]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FcMode {
    /// Pooled activations fill 4×4 tiles; tile slot `n` (in-tile column
    /// `n mod 4`, row `n div 4`) carries neuron `n`'s weight for that tile.
    PooledCheckerboard,
    /// A grid of square regions each holding every activation map; region
    /// `r` carries neuron `r`'s weights.
    DuplicatedMaps,
}

/// Neurons whose PEs occupy disjoint columns, so one stack count separates them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronGroup {
    pub mask: MaskPattern,
    /// Neuron owning each array column, within this group.
    pub column_owner: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcLayout {
    pub mode: FcMode,
    pub weights: AnalogPlane,
    pub masks: Vec<MaskPattern>,
    pub groups: Vec<NeuronGroup>,
}

/// Places `weights` for activations laid out on `grid`.
///
/// `PooledCheckerboard`: `grid` is the pooled-map grid; block `b` holds map
/// `b`, whose activations are its 4×4 tiles in raster order.
/// `DuplicatedMaps`: `grid` is the per-map grid (as after
/// [`super::arrange_for_fc`]); region-local block `(lc, lr)` holds map
/// `side·lr + lc` and activation `map·bw·bh + row·bw + col`.
pub fn embed_fc_weights(
    weights: &TernaryFcWeights,
    mode: FcMode,
    grid: &BlockGrid,
) -> Result<FcLayout, KernelError> {
    let (w, h) = (grid.width(), grid.height());
    let (bw, bh) = (grid.block_w, grid.block_h);
    let mismatch = |want: usize| {
        KernelError::Layout(format!(
            "layout has {want} activations, weights have {}",
            weights.inputs()
        ))
    };
    match mode {
        FcMode::PooledCheckerboard => {
            if bw % POOL != 0 || bh % POOL != 0 {
                return Err(KernelError::Layout("blocks not aligned to pool tiles".into()));
            }
            let (tx, ty) = (bw / POOL, bh / POOL);
            let want = grid.block_count() * tx * ty;
            if weights.inputs() != want {
                return Err(mismatch(want));
            }
            let plane = AnalogPlane::from_fn(w, h, |x, y| {
                let n = (y % POOL) * POOL + x % POOL;
                if n >= NEURONS {
                    return 0.0;
                }
                let a = grid.block_of(x, y) * tx * ty + ((y % bh) / POOL) * tx + (x % bw) / POOL;
                f64::from(weights.get(n, a))
            });
            let masks = (0..NEURONS)
                .map(|n| MaskPattern::lattice(POOL, n % POOL, n / POOL))
                .collect();
            let groups = (0..NEURONS.div_ceil(POOL))
                .map(|gy| {
                    let cols = POOL.min(NEURONS - gy * POOL);
                    NeuronGroup {
                        mask: MaskPattern::periodic((POOL, POOL), 0..cols, gy..gy + 1),
                        column_owner: (0..w)
                            .map(|x| (x % POOL < cols).then_some(gy * POOL + x % POOL))
                            .collect(),
                    }
                })
                .collect();
            Ok(FcLayout {
                mode,
                weights: plane,
                masks,
                groups,
            })
        }
        FcMode::DuplicatedMaps => {
            let maps = grid.blocks_x;
            let side = (1..=maps).find(|s| s * s >= maps).unwrap_or(1);
            if side * side != maps || !grid.blocks_y.is_multiple_of(side) {
                return Err(KernelError::Layout(format!(
                    "{maps} maps do not form square regions"
                )));
            }
            let (rw, rh) = (side * bw, side * bh);
            let (rx, ry) = (w / rw, h / rh);
            if rx * ry < NEURONS {
                return Err(KernelError::Layout(format!(
                    "{} regions cannot host {NEURONS} neurons",
                    rx * ry
                )));
            }
            let want = maps * bw * bh;
            if weights.inputs() != want {
                return Err(mismatch(want));
            }
            let plane = AnalogPlane::from_fn(w, h, |x, y| {
                let r = (y / rh) * rx + x / rw;
                if r >= NEURONS {
                    return 0.0;
                }
                let (lx, ly) = (x % rw, y % rh);
                let map = (ly / bh) * side + lx / bw;
                let a = map * bw * bh + (ly % bh) * bw + lx % bw;
                f64::from(weights.get(r, a))
            });
            let masks = (0..NEURONS)
                .map(|r| {
                    let (cx, cy) = (r % rx, r / rx);
                    MaskPattern::rect(cx * rw..(cx + 1) * rw, cy * rh..(cy + 1) * rh)
                })
                .collect();
            let groups = (0..NEURONS.div_ceil(rx))
                .map(|gy| {
                    let cols = rx.min(NEURONS - gy * rx);
                    NeuronGroup {
                        mask: MaskPattern::rect(0..cols * rw, gy * rh..(gy + 1) * rh),
                        column_owner: (0..w)
                            .map(|x| (x / rw < cols).then_some(gy * rx + x / rw))
                            .collect(),
                    }
                })
                .collect();
            Ok(FcLayout {
                mode,
                weights: plane,
                masks,
                groups,
            })
        }
    }
}

/// `product = act · weight` per PE, by flagging on the weight sign.
pub fn fc_multiply(state: &mut PeArray, act: AReg, weights: AReg, product: AReg) {
    state.set_flag(FlagPredicate::All);
    state.write_const(product, 0.0);
    state.set_flag(FlagPredicate::WherePositive(weights));
    state.copy(product, act);
    state.set_flag(FlagPredicate::WhereNegative(weights));
    state.neg(product, act);
    state.set_flag(FlagPredicate::All);
}

/// Per-neuron global sums of `product`, each the mean of `repeats` readings.
pub fn analog_neuron_sums(
    state: &mut PeArray,
    product: AReg,
    layout: &FcLayout,
    mask: DReg,
    repeats: usize,
) -> [f64; NEURONS] {
    let repeats = repeats.max(1);
    let mut out = [0.0; NEURONS];
    state.set_flag(FlagPredicate::All);
    for (n, pattern) in layout.masks.iter().enumerate() {
        state.load_mask(mask, pattern);
        state.set_flag(FlagPredicate::WhereBit(mask));
        let total: f64 = (0..repeats).map(|_| state.global_sum(product)).sum();
        out[n] = total / repeats as f64;
        state.set_flag(FlagPredicate::All);
    }
    out
}

/// Registers for [`digital_neuron_sums`]; `bits.len()` sets the bit depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigitalRegs {
    pub magnitude: AReg,
    pub bits: Vec<DReg>,
    pub positive: DReg,
    pub negative: DReg,
    pub group: DReg,
    pub work: DReg,
    pub stack: StackRegs,
}

/// Exact per-neuron sums of `product` at `bits.len()`-bit precision.
///
/// Magnitudes are digitized over `[0, range_max]`; every bit plane, split by
/// weight sign and by neuron group, is counted with [`stack_count_columns`].
/// A neuron's value is `q · Σ_b 2^b (count⁺_b − count⁻_b)`.
pub fn digital_neuron_sums(
    state: &mut PeArray,
    product: AReg,
    weights: AReg,
    layout: &FcLayout,
    regs: &DigitalRegs,
    range_max: f64,
) -> Result<[f64; NEURONS], KernelError> {
    state.set_flag(FlagPredicate::All);
    state.copy(regs.magnitude, product);
    state.set_flag(FlagPredicate::WhereNegative(product));
    state.neg(regs.magnitude, product);
    state.set_flag(FlagPredicate::All);
    state.convert_to_bits(regs.magnitude, &regs.bits, range_max)?;
    for (reg, pred) in [
        (regs.positive, FlagPredicate::WherePositive(weights)),
        (regs.negative, FlagPredicate::WhereNegative(weights)),
    ] {
        state.bit_write(reg, false);
        state.set_flag(pred);
        state.bit_write(reg, true);
        state.set_flag(FlagPredicate::All);
    }
    let mut codes = [0i64; NEURONS];
    for group in &layout.groups {
        state.load_mask(regs.group, &group.mask);
        for (sign, sign_reg) in [(1i64, regs.positive), (-1i64, regs.negative)] {
            for (b, &bit) in regs.bits.iter().enumerate() {
                state.bit_logic(regs.work, bit, sign_reg, BitOp::And);
                state.bit_logic(regs.work, regs.work, regs.group, BitOp::And);
                let cols = stack_count_columns(state, regs.work, &regs.stack)?;
                for (x, &c) in cols.iter().enumerate() {
                    if let Some(n) = group.column_owner[x] {
                        codes[n] += sign * ((c as i64) << b);
                    }
                }
            }
        }
    }
    let q = quant::step(regs.bits.len() as u32, range_max);
    Ok(codes.map(|c| c as f64 * q))
}
