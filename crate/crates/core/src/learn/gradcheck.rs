//! Finite-difference check of analytic gradients.

use rand::seq::index::sample;

use crate::rng::SimRng;

/// Coordinates probed per check.
pub const PROBED: usize = 64;

/// Max relative error between `grad` (analytic, from `loss`) and central
/// differences over a random subset of at most [`PROBED`] coordinates.
///
/// `loss(params, grad)` returns the loss and, when `grad` is given, adds the
/// analytic gradient into it. The relative error is
/// `|a − n| / max(|a| + |n|, 1e-8)`.
pub fn grad_check(
    params: &[f64],
    loss: impl Fn(&[f64], Option<&mut [f64]>) -> f64,
    fd_step: f64,
    rng: &mut SimRng,
) -> f64 {
    let mut g = vec![0.0; params.len()];
    loss(params, Some(&mut g));
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in sample(rng, params.len(), PROBED.min(params.len())) {
        let x0 = p[i];
        p[i] = x0 + fd_step;
        let up = loss(&p, None);
        p[i] = x0 - fd_step;
        let down = loss(&p, None);
        p[i] = x0;
        let num = (up - down) / (2.0 * fd_step);
        worst = worst.max((g[i] - num).abs() / (g[i].abs() + num.abs()).max(1e-8));
    }
    worst
}
