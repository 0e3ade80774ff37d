//! Finite-difference gradient verification.
//!
//! Central differences over scalar loss functions; used by the layer and
//! model tests as an oracle that only ever touches forward passes, so it
//! stays independent of the backprop code it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tolerance for 64-bit gradients: relative error with a unit floor, so
/// near-zero gradients are compared absolutely at the same 1e-4 level.
pub const GRAD_RTOL: f64 = 1e-4;

const STEP: f64 = 1e-5;

/// Uniform values in `[-1, 1]`, deterministic under `seed`.
pub fn seeded_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Verify `analytic[i] == dL/dx_i` for the loss `perturbed(i, eps)`,
/// which must evaluate the loss with `eps` added to parameter `i`.
///
/// Panics with a description of the first failing coordinate.
pub fn check_grad(analytic: &[f64], mut perturbed: impl FnMut(usize, f64) -> f64) {
    for (i, &a) in analytic.iter().enumerate() {
        let num = (perturbed(i, STEP) - perturbed(i, -STEP)) / (2.0 * STEP);
        let denom = a.abs().max(num.abs()).max(1.0);
        let rel = (a - num).abs() / denom;
        assert!(
            rel <= GRAD_RTOL,
            "gradient mismatch at index {i}: analytic {a:.9e}, numeric {num:.9e}, rel {rel:.3e}"
        );
    }
}

/// Same check but returns the worst relative error instead of panicking.
pub fn max_grad_error(analytic: &[f64], mut perturbed: impl FnMut(usize, f64) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let num = (perturbed(i, STEP) - perturbed(i, -STEP)) / (2.0 * STEP);
        let denom = a.abs().max(num.abs()).max(1.0);
        worst = worst.max((a - num).abs() / denom);
    }
    worst
}
