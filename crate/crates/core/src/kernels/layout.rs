//! Replication of block contents across the array by log2 doubling.

use super::{BlockGrid, KernelError};
use crate::array::{AReg, Direction, FlagPredicate, PeArray};

/// Copies the contents of block (0, 0) of `reg` into every block.
///
/// Everything outside block (0, 0) must be zero beforehand. `tmp` is
/// clobbered.
pub fn duplicate_input(
    state: &mut PeArray,
    reg: AReg,
    tmp: AReg,
    grid: &BlockGrid,
) -> Result<(), KernelError> {
    grid.check(state)?;
    state.set_flag(FlagPredicate::All);
    double_analog(state, reg, tmp, Direction::East, grid.block_w, grid.blocks_x);
    double_analog(state, reg, tmp, Direction::South, grid.block_h, grid.blocks_y);
    Ok(())
}

/// Copies the top row of blocks of `reg` down every block column.
/// Rows below the first must be zero beforehand.
pub fn duplicate_rows(
    state: &mut PeArray,
    reg: AReg,
    tmp: AReg,
    grid: &BlockGrid,
) -> Result<(), KernelError> {
    grid.check(state)?;
    state.set_flag(FlagPredicate::All);
    double_analog(state, reg, tmp, Direction::South, grid.block_h, grid.blocks_y);
    Ok(())
}

/// `count` copies of a `span`-wide stripe, built in ⌈log2 count⌉ copy-shift-add passes.
pub(crate) fn double_analog(
    state: &mut PeArray,
    reg: AReg,
    tmp: AReg,
    dir: Direction,
    span: usize,
    count: usize,
) {
    let mut have = 1;
    while have < count {
        state.copy(tmp, reg);
        state.shift_analog(tmp, dir, span * have);
        state.add(reg, reg, tmp);
        have *= 2;
    }
}
