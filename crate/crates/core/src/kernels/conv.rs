//! Parallel binary convolution with weights stored in the pixels.

use super::{BlockGrid, KernelError};
use crate::array::{AReg, BitOp, BitPlane, DReg, Direction, FlagPredicate, MaskPattern, PeArray};

/// A `k × k` binary filter. Bit `true` is weight +1, `false` is −1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConvFilter {
    k: usize,
    bits: Vec<bool>,
}

impl ConvFilter {
    /// Row-major bits; `None` if `bits.len() != k * k` or `k == 0`.
    pub fn new(k: usize, bits: Vec<bool>) -> Option<Self> {
        (k > 0 && bits.len() == k * k).then_some(Self { k, bits })
    }

    pub fn from_fn(k: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let bits = (0..k * k).map(|i| f(i / k, i % k)).collect();
        Self { k, bits }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bit(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.k + col]
    }

    /// Signed weight ±1.
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        if self.bit(row, col) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Checkerboard layout: the PE at `(x, y)` in block `b` stores
/// `filters[b][y mod k][x mod k]`; blocks without a filter store 0.
pub fn embed_conv_weights(
    filters: &[ConvFilter],
    grid: &BlockGrid,
    k: usize,
) -> Result<BitPlane, KernelError> {
    check_k(grid, k)?;
    if filters.len() > grid.block_count() {
        return Err(KernelError::TooManyFilters {
            count: filters.len(),
            capacity: grid.block_count(),
        });
    }
    if let Some((index, f)) = filters.iter().enumerate().find(|(_, f)| f.k != k) {
        return Err(KernelError::FilterShape {
            index,
            got: f.bits.len(),
            want: k * k,
        });
    }
    Ok(BitPlane::from_fn(grid.width(), grid.height(), |x, y| {
        filters
            .get(grid.block_of(x, y))
            .is_some_and(|f| f.bit(y % k, x % k))
    }))
}

fn check_k(grid: &BlockGrid, k: usize) -> Result<(), KernelError> {
    if k == 0 || !grid.block_w.is_multiple_of(k) || !grid.block_h.is_multiple_of(k) {
        return Err(KernelError::FilterSize {
            k,
            block_w: grid.block_w,
            block_h: grid.block_h,
        });
    }
    Ok(())
}

/// Bit registers used by [`broadcast_tap`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapRegs {
    pub weights: DReg,
    pub out: DReg,
    pub tmp: DReg,
    pub mask: DReg,
}

/// Gives every PE the weight bit stored at `(row i, col j)` of its `k × k`
/// tile: `out(x, y) = W(x − x mod k + j, y − y mod k + i)`.
///
/// For each in-tile position the stored bit is fetched over the Manhattan
/// distance with bit shifts and kept by a lattice mask.
pub fn broadcast_tap(state: &mut PeArray, regs: &TapRegs, k: usize, tap: (usize, usize)) {
    state.set_flag(FlagPredicate::All);
    fetch_tap(state, regs, k, tap);
}

/// [`broadcast_tap`] body; expects every PE flagged.
fn fetch_tap(state: &mut PeArray, regs: &TapRegs, k: usize, (i, j): (usize, usize)) {
    state.bit_write(regs.out, false);
    for ly in 0..k {
        for lx in 0..k {
            state.bit_copy(regs.tmp, regs.weights);
            shift_signed(state, regs.tmp, lx as isize - j as isize, Direction::East, Direction::West);
            shift_signed(state, regs.tmp, ly as isize - i as isize, Direction::South, Direction::North);
            state.load_mask(regs.mask, &MaskPattern::lattice(k, lx, ly));
            state.bit_logic(regs.tmp, regs.tmp, regs.mask, BitOp::And);
            state.bit_logic(regs.out, regs.out, regs.tmp, BitOp::Or);
        }
    }
}

fn shift_signed(state: &mut PeArray, reg: DReg, d: isize, pos: Direction, neg: Direction) {
    if d > 0 {
        state.shift_bits(reg, pos, d as usize);
    } else if d < 0 {
        state.shift_bits(reg, neg, d.unsigned_abs());
    }
}

/// Registers used by [`conv_layer`]. `input` is preserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvRegs {
    pub input: AReg,
    pub output: AReg,
    pub row: AReg,
    pub work: AReg,
    pub tap: TapRegs,
}

/// `out(x, y) = Σ_{i,j<k} s(i, j) · I(x + j, y + i)` with `s` the ±1 filter
/// of the PE's block.
///
/// When the array's block-isolation mode is on, neighbour transfers stop at
/// block edges for the duration of the layer, so `I` reads 0 outside the
/// block.
pub fn conv_layer(
    state: &mut PeArray,
    regs: &ConvRegs,
    grid: &BlockGrid,
    k: usize,
) -> Result<(), KernelError> {
    grid.check(state)?;
    check_k(grid, k)?;
    let isolate = state.block_isolation();
    if isolate {
        state.set_active_isolation(Some((grid.block_w, grid.block_h)));
    }
    state.set_flag(FlagPredicate::All);
    state.write_const(regs.output, 0.0);
    state.copy(regs.row, regs.input);
    for i in 0..k {
        for j in 0..k {
            state.set_flag(FlagPredicate::All);
            if j == 0 {
                if i > 0 {
                    state.shift_analog(regs.row, Direction::North, 1);
                }
                state.copy(regs.work, regs.row);
            } else {
                state.shift_analog(regs.work, Direction::West, 1);
            }
            fetch_tap(state, &regs.tap, k, (i, j));
            state.bit_not(regs.tap.tmp, regs.tap.out);
            state.set_flag(FlagPredicate::WhereBit(regs.tap.out));
            state.add(regs.output, regs.output, regs.work);
            state.set_flag(FlagPredicate::WhereBit(regs.tap.tmp));
            state.sub(regs.output, regs.output, regs.work);
        }
    }
    state.set_flag(FlagPredicate::All);
    if isolate {
        state.set_active_isolation(None);
    }
    Ok(())
}
