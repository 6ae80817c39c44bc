//! Fixtures shared by the criterion benches.

use bidlab_core::rng::{self, SimRng};
use bidlab_core::UnitBoxAction;
use rand::Rng;

/// Deterministic unit-box actions with `k` segments.
pub fn actions(k: usize, n: usize, seed: u64) -> Vec<UnitBoxAction> {
    let mut r: SimRng = rng::seeded(seed);
    (0..n)
        .map(|_| UnitBoxAction {
            u_q: (0..k).map(|_| r.random()).collect(),
            u_p: (0..k).map(|_| r.random()).collect(),
        })
        .collect()
}
