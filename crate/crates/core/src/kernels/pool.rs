//! Rectification and 4×4 max pooling.

use super::{BlockGrid, KernelError};
use crate::array::{AReg, DReg, Direction, FlagPredicate, MaskPattern, PeArray};

/// Pooling window side.
pub const POOL: usize = 4;

/// Negative values become 0; zero and positive values are untouched.
pub fn relu(state: &mut PeArray, reg: AReg) {
    state.set_flag(FlagPredicate::WhereNegative(reg));
    state.write_const(reg, 0.0);
    state.set_flag(FlagPredicate::All);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolRegs {
    pub tmp: AReg,
    pub diff: AReg,
    pub mask: DReg,
}

/// Replaces every 4×4 tile of `reg` by its maximum.
///
/// Three shift-compare-replace steps eastward then three southward leave
/// each tile origin holding its window maximum; the origin value is then
/// copied across the tile.
pub fn maxpool4(
    state: &mut PeArray,
    reg: AReg,
    regs: &PoolRegs,
    grid: &BlockGrid,
) -> Result<(), KernelError> {
    grid.check(state)?;
    if !grid.block_w.is_multiple_of(POOL) || !grid.block_h.is_multiple_of(POOL) {
        return Err(KernelError::Layout(format!(
            "block {}x{} is not a multiple of the {POOL}x{POOL} pool",
            grid.block_w, grid.block_h
        )));
    }
    state.set_flag(FlagPredicate::All);
    for dir in [Direction::West, Direction::North] {
        for _ in 1..POOL {
            state.copy(regs.tmp, reg);
            state.shift_analog(regs.tmp, dir, 1);
            state.sub(regs.diff, regs.tmp, reg);
            state.set_flag(FlagPredicate::WherePositive(regs.diff));
            state.copy(reg, regs.tmp);
            state.set_flag(FlagPredicate::All);
        }
    }
    let spread = [
        (Direction::East, MaskPattern::periodic((POOL, usize::MAX), 1..POOL, 0..usize::MAX)),
        (Direction::South, MaskPattern::periodic((usize::MAX, POOL), 0..usize::MAX, 1..POOL)),
    ];
    for (dir, pattern) in spread {
        state.load_mask(regs.mask, &pattern);
        for _ in 1..POOL {
            state.copy(regs.tmp, reg);
            state.shift_analog(regs.tmp, dir, 1);
            state.set_flag(FlagPredicate::WhereBit(regs.mask));
            state.copy(reg, regs.tmp);
            state.set_flag(FlagPredicate::All);
        }
    }
    Ok(())
}
