//! Inter-layer plumbing for the three-layer network: bit-plane shrinking of
//! pooled maps, second-layer accumulation and the FC activation layout.

use super::layout::double_analog;
use super::pool::relu;
use super::{BlockGrid, KernelError};
use crate::array::{AReg, BitOp, DReg, Direction, FlagPredicate, MaskPattern, PeArray};

/// `bits[b]` receives bit `b` of `round(clamp(v, 0, range_max) / q)`,
/// `q = range_max / (2^B − 1)`.
pub fn digitize(
    state: &mut PeArray,
    src: AReg,
    bits: &[DReg],
    range_max: f64,
) -> Result<(), KernelError> {
    state.set_flag(FlagPredicate::All);
    state.convert_to_bits(src, bits, range_max)?;
    Ok(())
}

/// Inverse of [`digitize`]: `dst = code · q`, exact.
pub fn recombine(
    state: &mut PeArray,
    bits: &[DReg],
    dst: AReg,
    range_max: f64,
) -> Result<(), KernelError> {
    state.set_flag(FlagPredicate::All);
    state.convert_from_bits(dst, bits, range_max)?;
    Ok(())
}

/// Registers for [`shrink_and_duplicate`]; `bits.len()` sets the bit depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShrinkRegs {
    pub bits: Vec<DReg>,
    pub result: DReg,
    pub tmp: DReg,
    pub mask: DReg,
}

/// Shrinks every pooled map of `src` by `factor` and tiles the set so that
/// block (column c, row r) of `grid_out` holds map `r`, written to `dst`.
///
/// Maps are the blocks of `grid_in` in raster order and must be piecewise
/// constant on `factor × factor` tiles. Values are digitized to
/// `regs.bits.len()` bits over `[0, range_max]` and every bit plane is
/// compacted with masked shifts, which is lossless on such data.
pub fn shrink_and_duplicate(
    state: &mut PeArray,
    src: AReg,
    dst: AReg,
    regs: &ShrinkRegs,
    grid_in: &BlockGrid,
    factor: usize,
    grid_out: &BlockGrid,
    range_max: f64,
) -> Result<(), KernelError> {
    grid_in.check(state)?;
    grid_out.check(state)?;
    let (bw, bh) = (grid_in.block_w, grid_in.block_h);
    if factor == 0 || bw % factor != 0 || bh % factor != 0 {
        return Err(KernelError::Layout(format!(
            "shrink factor {factor} does not divide block {bw}x{bh}"
        )));
    }
    let (sw, sh) = (bw / factor, bh / factor);
    if grid_out.block_w != sw || grid_out.block_h != sh {
        return Err(KernelError::Layout(format!(
            "output blocks must be {sw}x{sh}, got {}x{}",
            grid_out.block_w, grid_out.block_h
        )));
    }
    if grid_in.blocks_x != factor || grid_out.blocks_y != grid_in.block_count() {
        return Err(KernelError::Layout(format!(
            "{} maps in {} block columns cannot fill {} output block rows",
            grid_in.block_count(),
            grid_in.blocks_x,
            grid_out.blocks_y
        )));
    }
    let g = state.geometry();
    digitize(state, src, &regs.bits, range_max)?;
    for &plane in &regs.bits {
        compact_axis(state, plane, regs, bw, factor, Direction::West);
        compact_axis(state, plane, regs, bh, factor, Direction::North);
        state.load_mask(regs.mask, &MaskPattern::periodic((bw, bh), 0..sw, 0..sh));
        state.bit_logic(plane, plane, regs.mask, BitOp::And);

        // map (mx, my) moves from (bw·mx, bh·my) to (0, sh·(mx + factor·my))
        state.bit_write(regs.result, false);
        for mx in 0..grid_in.blocks_x {
            state.load_mask(regs.mask, &MaskPattern::rect(bw * mx..bw * mx + sw, 0..g.height));
            state.bit_logic(regs.tmp, plane, regs.mask, BitOp::And);
            state.shift_bits(regs.tmp, Direction::West, bw * mx);
            state.shift_bits(regs.tmp, Direction::South, sh * mx);
            state.bit_logic(regs.result, regs.result, regs.tmp, BitOp::Or);
        }
        let mut have = 1;
        while have < grid_out.blocks_x {
            state.bit_copy(regs.tmp, regs.result);
            state.shift_bits(regs.tmp, Direction::East, sw * have);
            state.bit_logic(regs.result, regs.result, regs.tmp, BitOp::Or);
            have *= 2;
        }
        state.bit_copy(plane, regs.result);
    }
    recombine(state, &regs.bits, dst, range_max)
}

/// Keeps every `factor`-th column (or row) of each block, packed toward the
/// block origin. Step `u` moves block-local column `u + factor − 1` of the
/// current plane to column `u`.
fn compact_axis(
    state: &mut PeArray,
    plane: DReg,
    regs: &ShrinkRegs,
    block: usize,
    factor: usize,
    dir: Direction,
) {
    let local = |r: std::ops::Range<usize>| match dir {
        Direction::West => MaskPattern::periodic((block, usize::MAX), r, 0..usize::MAX),
        _ => MaskPattern::periodic((usize::MAX, block), 0..usize::MAX, r),
    };
    for u in 1..block / factor {
        state.load_mask(regs.mask, &local(u + factor - 1..block));
        state.bit_logic(regs.tmp, plane, regs.mask, BitOp::And);
        state.load_mask(regs.mask, &local(0..u));
        state.bit_logic(plane, plane, regs.mask, BitOp::And);
        state.shift_bits(regs.tmp, dir, factor - 1);
        state.bit_logic(plane, plane, regs.tmp, BitOp::Or);
    }
}

/// Sums each block column into its top block, rectifies, and copies the
/// result back down the column.
///
/// Block `(column c, row r)` of `conv` holds the response of input map `r`
/// to output filter `c`; afterwards every block of column `c` holds output
/// map `c`.
pub fn accumulate_feature_maps(
    state: &mut PeArray,
    conv: AReg,
    tmp: AReg,
    mask: DReg,
    grid: &BlockGrid,
) -> Result<(), KernelError> {
    grid.check(state)?;
    let g = state.geometry();
    state.set_flag(FlagPredicate::All);
    state.copy(tmp, conv);
    for _ in 1..grid.blocks_y {
        state.shift_analog(tmp, Direction::North, grid.block_h);
        state.add(conv, conv, tmp);
    }
    relu(state, conv);
    state.load_mask(mask, &MaskPattern::rect(0..g.width, grid.block_h..g.height));
    state.set_flag(FlagPredicate::WhereBit(mask));
    state.write_const(conv, 0.0);
    state.set_flag(FlagPredicate::All);
    double_analog(state, conv, tmp, Direction::South, grid.block_h, grid.blocks_y);
    Ok(())
}

/// Builds the duplicated-maps FC input from accumulated maps.
///
/// `src` has map `c` in every block of column `c` (`grid.blocks_x` maps).
/// The array is split into regions of `side × side` blocks with
/// `side² = maps`; afterwards every region holds all maps, map
/// `side·lr + lc` at region-local block `(lc, lr)`.
pub fn arrange_for_fc(
    state: &mut PeArray,
    src: AReg,
    dst: AReg,
    tmp: AReg,
    mask: DReg,
    grid: &BlockGrid,
) -> Result<usize, KernelError> {
    grid.check(state)?;
    let maps = grid.blocks_x;
    let side = (1..=maps).find(|s| s * s >= maps).unwrap_or(1);
    if side * side != maps || !grid.blocks_y.is_multiple_of(side) {
        return Err(KernelError::Layout(format!(
            "{maps} maps on a {}x{} block grid cannot form square regions",
            grid.blocks_x, grid.blocks_y
        )));
    }
    let region_w = side * grid.block_w;
    let region_h = side * grid.block_h;
    state.set_flag(FlagPredicate::All);
    state.write_const(dst, 0.0);
    for lr in 0..side {
        let rows = grid.block_h * lr..grid.block_h * (lr + 1);
        let pattern = MaskPattern::periodic(
            (usize::MAX, region_h),
            region_w * lr..region_w * (lr + 1),
            rows,
        );
        state.load_mask(mask, &pattern);
        state.write_const(tmp, 0.0);
        state.set_flag(FlagPredicate::WhereBit(mask));
        state.copy(tmp, src);
        state.set_flag(FlagPredicate::All);
        state.shift_analog(tmp, Direction::West, region_w * lr);
        state.add(dst, dst, tmp);
    }
    double_analog(state, dst, tmp, Direction::East, region_w, grid.blocks_x / side);
    Ok(side)
}
