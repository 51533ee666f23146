//! Exact popcount by letting set bits fall into per-column stacks.

use super::KernelError;
use crate::array::{BitOp, DReg, Direction, FlagPredicate, MaskPattern, PeArray};

/// Fall iterations on a full-height (256-row) array.
pub const STACK_ITERATIONS_FULL: usize = 255;

/// Scratch bit registers for [`stack_count`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackRegs {
    pub below: DReg,
    pub moving: DReg,
    pub bottom: DReg,
}

/// Number of set bits of `reg` in every column. `reg` is consumed: it holds
/// the settled stacks afterwards.
///
/// Each of the `height − 1` iterations moves a bit one row down if the cell
/// below was empty, in all columns at once. The top of every stack is then
/// isolated with a shifted XOR and read out as an address event; a top at
/// row `y` means `height − y` bits in that column.
pub fn stack_count_columns(
    state: &mut PeArray,
    reg: DReg,
    regs: &StackRegs,
) -> Result<Vec<u64>, KernelError> {
    let g = state.geometry();
    let h = g.height;
    state.set_flag(FlagPredicate::All);
    state.load_mask(regs.bottom, &MaskPattern::rect(0..g.width, h - 1..h));
    for _ in 1..h {
        // below(x, y) = occupied(x, y + 1), with the floor counting as occupied
        state.bit_copy(regs.below, reg);
        state.shift_bits(regs.below, Direction::North, 1);
        state.bit_logic(regs.below, regs.below, regs.bottom, BitOp::Or);
        state.bit_logic(regs.moving, reg, regs.below, BitOp::AndNot);
        state.bit_logic(regs.below, reg, regs.below, BitOp::And);
        state.shift_bits(regs.moving, Direction::South, 1);
        state.bit_logic(reg, regs.below, regs.moving, BitOp::Or);
    }
    state.bit_copy(regs.below, reg);
    state.shift_bits(regs.below, Direction::South, 1);
    state.bit_logic(regs.below, reg, regs.below, BitOp::Xor);
    let tops = state.event_readout(regs.below)?;
    let mut counts = vec![0u64; g.width];
    for (x, y) in tops {
        counts[x] += (h - y) as u64;
    }
    Ok(counts)
}

/// Total number of set bits of `reg` (consumed).
pub fn stack_count(state: &mut PeArray, reg: DReg, regs: &StackRegs) -> Result<u64, KernelError> {
    Ok(stack_count_columns(state, reg, regs)?.iter().sum())
}
