//! Convergence orders and the quadratic recursion bound.

use crate::error::{Error, Result};

/// `log₂(err_i / err_{i+1})` for consecutive mesh sizes; every `hs[i+1]`
/// must be exactly half of `hs[i]` (relative tolerance 1e-12).
pub fn convergence_order(errors: &[f64], hs: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != hs.len() {
        return Err(Error::DimensionMismatch {
            expected: hs.len(),
            found: errors.len(),
        });
    }
    for w in hs.windows(2) {
        if !((w[0] - 2.0 * w[1]).abs() <= 1e-12 * w[0]) || !(w[1] > 0.0) {
            return Err(Error::Config(format!(
                "mesh sizes {} and {} are not a halving",
                w[0], w[1]
            )));
        }
    }
    Ok(errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect())
}

/// Iterates `a_{k+1} = a_k² + b` for `k < K` and checks
/// `a_k ≤ a_0^{2^k} + (2 + 1/(1 − 2a_0)) b` at every step.
pub fn check_recursion_bound(a0: f64, b: f64, k_max: usize) -> Result<bool> {
    if !(0.0..0.5).contains(&a0) || !(b > 0.0 && b < 0.25) {
        return Err(Error::Domain(format!(
            "need 0 <= a0 < 1/2 and 0 < b < 1/4, got a0 = {a0}, b = {b}"
        )));
    }
    let c = (2.0 + 1.0 / (1.0 - 2.0 * a0)) * b;
    let mut a = a0;
    // a0^{2^k} by repeated squaring, which is exact up to rounding and
    // underflows cleanly to zero.
    let mut p = a0;
    for k in 0..=k_max {
        if a > p + c {
            return Ok(false);
        }
        if k < k_max {
            a = a * a + b;
            p *= p;
        }
    }
    Ok(true)
}
