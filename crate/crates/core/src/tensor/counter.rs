//! Per-thread multiply-accumulate counter fed by the matmul kernels.
//!
//! Used to cross-check the analytical FLOP model against what the kernels
//! actually execute.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn record(macs: usize) {
    MACS.with(|c| c.set(c.get().wrapping_add(macs as u64)));
}

/// Total multiply-accumulates executed by matmul kernels on this thread.
pub fn macs_so_far() -> u64 {
    MACS.with(Cell::get)
}

/// Runs `f` and returns its result together with the number of
/// multiply-accumulates the matmul kernels performed on this thread meanwhile.
pub fn count_macs<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = macs_so_far();
    let out = f();
    (out, macs_so_far().wrapping_sub(before))
}
