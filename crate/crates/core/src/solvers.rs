//! Finite element iterations started from a nodal initial guess: Newton for
//! semilinear problems, inverse power iteration with Rayleigh quotients,
//! bordered Newton for the normalised nonlinear eigenproblem, plus Picard
//! and two-grid baselines.
//!
//! Semilinear problems are written as `−Δu + F(x, u) = 0` with homogeneous
//! Dirichlet data; nonlinear terms are integrated from the P1 interpolant of
//! the current iterate.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fem::{
    assemble_load_with, assemble_stiffness, assemble_weighted_mass, assemble_weighted_mass_with,
    l2_norm, mass_matrix, prolongate, FemVector, Mesh,
};
use crate::linalg::{
    dot, matvec, norm2, solve_bordered, solve_general, CsrMatrix, SpdSolver, DEFAULT_CG_TOL,
};
use crate::variational::{Nonlinearity, ScalarField};

/// Relative update size beyond which an iteration is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e8;

/// Bounds on `‖u_k‖_0` for the unnormalised power iteration.
pub const NORM_BOUNDS: (f64, f64) = (1e-6, 1e6);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eps: f64,
    pub max_iter: usize,
    /// Power iteration only: rescale every iterate to unit `L²` norm.
    #[serde(default)]
    pub renormalize: bool,
}

impl SolverConfig {
    pub fn new(eps: f64, max_iter: usize) -> Self {
        Self {
            eps,
            max_iter,
            renormalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || self.max_iter == 0 {
            return Err(Error::Config(
                "solver needs eps > 0 and max_iter >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iterations: usize,
    /// `e_k = ‖u_k − u_{k−1}‖_0 / ‖u_{k−1}‖_0` for `k = 1..=iterations`.
    pub errors: Vec<f64>,
    pub solution: FemVector,
    /// `λ_0, …, λ_K` for eigenvalue solvers.
    pub lambdas: Vec<f64>,
    /// `μ_1, …, μ_K` for the bordered Newton iteration.
    pub mus: Vec<f64>,
    /// Final nonlinear residual `‖A_V u + (βu³, ·) − λ M u‖₂`.
    pub residual: Option<f64>,
    pub converged: bool,
    pub diverged: bool,
    /// Power iteration left the admissible norm range.
    pub unstable: bool,
    /// Iterations spent on the coarse mesh (two-grid only).
    pub coarse_iterations: Option<usize>,
}

impl IterationReport {
    pub fn lambda(&self) -> Option<f64> {
        self.lambdas.last().copied()
    }
}

fn relative_change(mass: &CsrMatrix, v: &[f64], u: &[f64]) -> Result<f64> {
    let dv = l2_norm(mass, v)?;
    let nu = l2_norm(mass, u)?;
    Ok(if nu > 0.0 { dv / nu } else { dv })
}

/// Records `e` and updates the stopping flags; returns true to stop.
fn record_step(report: &mut IterationReport, e: f64, eps: f64) -> bool {
    report.iterations += 1;
    report.errors.push(e);
    if !e.is_finite() || e > DIVERGENCE_THRESHOLD {
        report.diverged = true;
        return true;
    }
    if e <= eps {
        report.converged = true;
        return true;
    }
    false
}

fn laplacian(mesh: &Mesh) -> CsrMatrix {
    assemble_stiffness(mesh, |_| 1.0)
}

/// One Newton correction `v` for `−Δu + F(x, u) = 0` at `u`.
fn newton_correction(mesh: &Mesh, a: &CsrMatrix, f: &Nonlinearity, u: &[f64]) -> Result<Vec<f64>> {
    let w = assemble_weighted_mass_with(mesh, u, |x, v| f.derivative(x, v))?;
    let jac = a.add_scaled(&w, 1.0)?;
    let load = assemble_load_with(mesh, u, |x, v| f.eval(x, v))?;
    let au = matvec(a, u)?;
    let rhs: Vec<f64> = au.iter().zip(&load).map(|(a, l)| -a - l).collect();
    solve_general(&jac, &rhs)
}

/// Newton's method for `−Δu + F(x, u) = 0`.
pub fn newton_semilinear(
    mesh: &Mesh,
    f: &Nonlinearity,
    u0: &[f64],
    cfg: &SolverConfig,
) -> Result<IterationReport> {
    cfg.validate()?;
    check_dim(mesh.num_interior(), u0.len())?;
    let a = laplacian(mesh);
    let m = mass_matrix(mesh);
    let mut u = u0.to_vec();
    let mut report = IterationReport::default();
    for _ in 0..cfg.max_iter {
        let v = newton_correction(mesh, &a, f, &u)?;
        let e = relative_change(&m, &v, &u)?;
        if e.is_finite() {
            u.iter_mut().zip(&v).for_each(|(u, v)| *u += v);
        }
        if record_step(&mut report, e, cfg.eps) {
            break;
        }
    }
    report.solution = u;
    Ok(report)
}

/// Fixed point `A u_{k+1} = −(F(·, u_k), ·)`.
pub fn picard_semilinear(
    mesh: &Mesh,
    f: &Nonlinearity,
    u0: &[f64],
    cfg: &SolverConfig,
) -> Result<IterationReport> {
    cfg.validate()?;
    check_dim(mesh.num_interior(), u0.len())?;
    let a = laplacian(mesh);
    let m = mass_matrix(mesh);
    let solver = SpdSolver::new(&a, DEFAULT_CG_TOL)?;
    let mut u = u0.to_vec();
    let mut report = IterationReport::default();
    for _ in 0..cfg.max_iter {
        let load = assemble_load_with(mesh, &u, |x, v| f.eval(x, v))?;
        let next = if load.iter().all(|l| l.is_finite()) {
            solver.solve(&load.iter().map(|l| -l).collect::<Vec<_>>())?
        } else {
            vec![f64::NAN; u.len()]
        };
        let diff: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let e = relative_change(&m, &diff, &u).unwrap_or(f64::NAN);
        u = next;
        if record_step(&mut report, e, cfg.eps) {
            break;
        }
    }
    report.solution = u;
    Ok(report)
}

/// Newton to convergence on `coarse`, prolongation to `fine`, then a
/// single Newton step on `fine`.
pub fn two_grid_semilinear(
    coarse: &Mesh,
    fine: &Mesh,
    f: &Nonlinearity,
    u0_coarse: &[f64],
    cfg: &SolverConfig,
) -> Result<IterationReport> {
    if !(coarse.h() > fine.h()) {
        return Err(Error::Config(
            "two-grid needs a coarse mesh size larger than the fine one".into(),
        ));
    }
    let coarse_report = newton_semilinear(coarse, f, u0_coarse, cfg)?;
    let start = prolongate(coarse, &coarse_report.solution, fine)?;
    let one_step = SolverConfig {
        max_iter: 1,
        ..*cfg
    };
    let mut report = newton_semilinear(fine, f, &start, &one_step)?;
    // The fine step is a single correction, so convergence is that of the
    // coarse stage.
    report.converged = coarse_report.converged && !report.diverged;
    report.diverged |= coarse_report.diverged;
    report.coarse_iterations = Some(coarse_report.iterations);
    Ok(report)
}

/// Inverse power iteration `A u_{k+1} = λ_k M u_k` with Rayleigh quotients,
/// for the Dirichlet Laplacian on `mesh`.
pub fn power_eigen(mesh: &Mesh, u0: &[f64], cfg: &SolverConfig) -> Result<IterationReport> {
    power_eigen_with(&laplacian(mesh), &mass_matrix(mesh), u0, cfg)
}

/// [`power_eigen`] for a given stiffness/mass pair.
pub fn power_eigen_with(
    a: &CsrMatrix,
    m: &CsrMatrix,
    u0: &[f64],
    cfg: &SolverConfig,
) -> Result<IterationReport> {
    cfg.validate()?;
    check_dim(a.dim(), u0.len())?;
    let n0 = l2_norm(m, u0)?;
    if !(n0 > 0.0) {
        return Err(Error::Domain(
            "initial eigenvector guess has zero L2 norm".into(),
        ));
    }
    let mut u: Vec<f64> = u0.iter().map(|v| v / n0).collect();
    let solver = SpdSolver::new(a, DEFAULT_CG_TOL)?;
    let rq = |u: &[f64]| -> Result<f64> { Ok(a.quad_form(u)? / m.quad_form(u)?) };
    let mut lambda = rq(&u)?;
    let mut report = IterationReport {
        lambdas: vec![lambda],
        ..Default::default()
    };
    for _ in 0..cfg.max_iter {
        let mu = matvec(m, &u)?;
        let mut next = solver.solve(&mu.iter().map(|v| lambda * v).collect::<Vec<_>>())?;
        let diff: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let e = relative_change(m, &diff, &u)?;
        lambda = rq(&next)?;
        report.lambdas.push(lambda);
        let norm = l2_norm(m, &next)?;
        if cfg.renormalize {
            next.iter_mut().for_each(|v| *v /= norm);
        }
        u = next;
        let stop = record_step(&mut report, e, cfg.eps);
        if !cfg.renormalize && !(NORM_BOUNDS.0..=NORM_BOUNDS.1).contains(&norm) {
            report.unstable = true;
            report.converged = false;
            break;
        }
        if stop {
            break;
        }
    }
    report.solution = u;
    Ok(report)
}

/// Bordered Newton iteration for `−Δu + Vu + βu³ = λu`, `‖u‖_0 = 1`.
pub fn newton_nonlinear_eigen(
    mesh: &Mesh,
    potential: &ScalarField,
    beta: f64,
    u0: &[f64],
    cfg: &SolverConfig,
) -> Result<IterationReport> {
    cfg.validate()?;
    check_dim(mesh.num_interior(), u0.len())?;
    let v = potential.clone();
    let a_v = laplacian(mesh).add_scaled(&assemble_weighted_mass(mesh, move |x| v(x)), 1.0)?;
    let m = mass_matrix(mesh);
    let n0 = l2_norm(&m, u0)?;
    if !(n0 > 0.0) {
        return Err(Error::Domain(
            "initial eigenvector guess has zero L2 norm".into(),
        ));
    }
    let mut u: Vec<f64> = u0.iter().map(|v| v / n0).collect();
    let cubic = |u: &[f64]| assemble_load_with(mesh, u, |_, v| beta * v * v * v);
    let mut lambda = a_v.quad_form(&u)? + dot(&cubic(&u)?, &u);
    let mut report = IterationReport {
        lambdas: vec![lambda],
        ..Default::default()
    };
    for _ in 0..cfg.max_iter {
        let w = assemble_weighted_mass_with(mesh, &u, |_, v| 3.0 * beta * v * v)?;
        let k = a_v.add_scaled(&w, 1.0)?.add_scaled(&m, -lambda)?;
        let mu_vec = matvec(&m, &u)?;
        let avu = matvec(&a_v, &u)?;
        let cu = cubic(&u)?;
        let rhs: Vec<f64> = (0..u.len())
            .map(|i| -avu[i] - cu[i] + lambda * mu_vec[i])
            .collect();
        let s = 1.0 - dot(&u, &mu_vec);
        let (dv, mu) = solve_bordered(&k, &mu_vec, &rhs, s)?;
        let e = relative_change(&m, &dv, &u)?;
        u.iter_mut().zip(&dv).for_each(|(u, d)| *u += d);
        lambda += mu;
        report.lambdas.push(lambda);
        report.mus.push(mu);
        if record_step(&mut report, e, cfg.eps) {
            break;
        }
    }
    let avu = matvec(&a_v, &u)?;
    let cu = cubic(&u)?;
    let mu_vec = matvec(&m, &u)?;
    let res: Vec<f64> = (0..u.len())
        .map(|i| avu[i] + cu[i] - lambda * mu_vec[i])
        .collect();
    report.residual = Some(norm2(&res));
    report.solution = u;
    Ok(report)
}
