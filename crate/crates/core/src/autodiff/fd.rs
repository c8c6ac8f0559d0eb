//! Central finite differences, used as an independent check of the tape.

use crate::error::{Error, Result};
use crate::par::Execution;

/// `(f(θ + h e_i) − f(θ − h e_i)) / 2h` for every coordinate `i`.
pub fn fd_gradient_oracle<F>(loss_fn: F, params: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    fd_partials(
        loss_fn,
        params,
        step,
        &(0..params.len()).collect::<Vec<_>>(),
        Execution::default(),
    )
}

/// Central differences restricted to the listed coordinates.
pub fn fd_partials<F>(
    loss_fn: F,
    params: &[f64],
    step: f64,
    coords: &[usize],
    exec: Execution,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    Ok(exec.map(coords, |&i| {
        let mut p = params.to_vec();
        p[i] = params[i] + step;
        let up = loss_fn(&p);
        p[i] = params[i] - step;
        let down = loss_fn(&p);
        (up - down) / (2.0 * step)
    }))
}
