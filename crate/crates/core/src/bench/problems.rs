//! Registry of the benchmark problems with their manufactured data.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::BoxDomain;
use crate::variational::{
    constant_field, field, FrictionJ2, GpEigenJ5, LinearEigenJ3, LossSpec, LsmSemilinear,
    Nonlinearity, ProblemDomain, RitzLinear, ScalarField,
};

/// `(x, u, ∇u, Δu) ↦ L u − f` at a point; zero for an exact solution.
pub type PdeResidual = Arc<dyn Fn(&[f64], f64, &[f64], f64) -> f64 + Send + Sync>;

/// Finite element iteration used after training.
#[derive(Clone)]
pub enum Phase2 {
    /// Training only.
    None,
    /// Newton for `−Δu + F(x, u) = 0`.
    Newton(Nonlinearity),
    /// Inverse power iteration for the Dirichlet Laplacian.
    Power,
    /// Bordered Newton for `−Δu + Vu + βu³ = λu`, `‖u‖_0 = 1`.
    GpNewton { potential: ScalarField, beta: f64 },
}

#[derive(Clone)]
pub struct ProblemCase {
    pub id: &'static str,
    pub dim: usize,
    pub domain: ProblemDomain,
    pub exact: Option<ScalarField>,
    /// Exact eigenvalue, for eigenproblems with known spectrum.
    pub eigenvalue: Option<f64>,
    pub residual: Option<PdeResidual>,
    pub loss: LossSpec,
    pub phase2: Phase2,
    /// Mesh size on which training errors are measured.
    pub test_h: f64,
    pub default_epochs: usize,
}

impl std::fmt::Debug for ProblemCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemCase")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("loss", &self.loss)
            .finish_non_exhaustive()
    }
}

impl ProblemCase {
    pub fn is_eigen(&self) -> bool {
        matches!(self.phase2, Phase2::Power | Phase2::GpNewton { .. })
            || matches!(self.loss, LossSpec::Eigen(_) | LossSpec::Gp(_))
    }

    /// Normalisation point `x0` of eigenvalue losses.
    pub fn x0(&self) -> Option<&[f64]> {
        match &self.loss {
            LossSpec::Eigen(s) => Some(&s.x0),
            LossSpec::Gp(s) => Some(&s.x0),
            _ => None,
        }
    }
}

pub const PROBLEM_IDS: [&str; 6] = ["ex5_1", "ex5_2", "ex5_3", "ex5_4", "ex5_5", "ex5_6"];

/// Dimensions a problem id is registered for.
pub fn problem_dims(id: &str) -> &'static [usize] {
    match id {
        "ex5_1" | "ex5_3" => &[1],
        "ex5_2" => &[2],
        "ex5_4" | "ex5_5" | "ex5_6" => &[1, 2],
        _ => &[],
    }
}

pub fn problem(id: &str, dim: usize) -> Result<ProblemCase> {
    if !problem_dims(id).contains(&dim) {
        return Err(if problem_dims(id).is_empty() {
            Error::UnknownProblem(id.to_string())
        } else {
            Error::Config(format!("{id} is not defined in dimension {dim}"))
        });
    }
    Ok(match id {
        "ex5_1" => ex5_1(),
        "ex5_2" => ex5_2(),
        "ex5_3" => ex5_3(),
        "ex5_4" => ex5_4(dim),
        "ex5_5" => ex5_5(dim),
        _ => ex5_6(dim),
    })
}

pub fn all_problems() -> Vec<ProblemCase> {
    PROBLEM_IDS
        .iter()
        .flat_map(|id| {
            problem_dims(id)
                .iter()
                .map(move |&d| problem(id, d).expect("registered"))
        })
        .collect()
}

/// `−((1+x²)u')' + x²u = f` on `(−1, 1)`, `u = sin πx`.
fn ex5_1() -> ProblemCase {
    let f = |x: f64| {
        PI * PI * (1.0 + x * x) * (PI * x).sin() - 2.0 * PI * x * (PI * x).cos()
            + x * x * (PI * x).sin()
    };
    ProblemCase {
        id: "ex5_1",
        dim: 1,
        domain: ProblemDomain::dirichlet(BoxDomain::interval(-1.0, 1.0)),
        exact: Some(field(|x| (PI * x[0]).sin())),
        eigenvalue: None,
        residual: Some(Arc::new(move |x, u, g, lap| {
            let x = x[0];
            -(1.0 + x * x) * lap - 2.0 * x * g[0] + x * x * u - f(x)
        })),
        loss: LossSpec::Ritz(RitzLinear {
            p: field(|x| 1.0 + x[0] * x[0]),
            q: field(|x| x[0] * x[0]),
            f: field(move |x| f(x[0])),
            gamma: 500.0,
        }),
        phase2: Phase2::None,
        test_h: 2.0 / 512.0,
        default_epochs: 1000,
    }
}

/// `−Δu + u = f` on the unit square with friction `g = 1` on the right edge,
/// `u = (sin x − x sin 1) sin 2πy`.
fn ex5_2() -> ProblemCase {
    let u = |x: &[f64]| (x[0].sin() - x[0] * 1f64.sin()) * (2.0 * PI * x[1]).sin();
    let f = move |x: &[f64]| x[0].sin() * (2.0 * PI * x[1]).sin() + (4.0 * PI * PI + 1.0) * u(x);
    ProblemCase {
        id: "ex5_2",
        dim: 2,
        domain: ProblemDomain::right_edge_contact(BoxDomain::unit_cube(2)).expect("2D box"),
        exact: Some(field(u)),
        eigenvalue: None,
        residual: Some(Arc::new(move |x, u, _, lap| -lap + u - f(x))),
        loss: LossSpec::Friction(FrictionJ2 {
            f: field(f),
            g: constant_field(1.0),
            gamma: 500.0,
        }),
        phase2: Phase2::None,
        test_h: 1.0 / 128.0,
        default_epochs: 1000,
    }
}

/// `−u'' = λu` on `(0, 1)`, `λ = π²`, `u = sin(π(x − 1))`.
fn ex5_3() -> ProblemCase {
    ProblemCase {
        id: "ex5_3",
        dim: 1,
        domain: ProblemDomain::dirichlet(BoxDomain::unit_cube(1)),
        exact: Some(field(|x| (PI * (x[0] - 1.0)).sin())),
        eigenvalue: Some(PI * PI),
        residual: Some(Arc::new(|_, u, _, lap| -lap - PI * PI * u)),
        loss: LossSpec::Eigen(LinearEigenJ3 {
            p: constant_field(1.0),
            q: constant_field(0.0),
            gamma: 100.0,
            x0: vec![0.5],
            use_boundary_factor: true,
        }),
        phase2: Phase2::Power,
        test_h: 1.0 / 256.0,
        default_epochs: 500,
    }
}

/// `−Δu − (u−1)³ + (u+2)² = f` on `(0,1)^d` with `u = 3 Π sin 2πx_i`.
fn ex5_4(dim: usize) -> ProblemCase {
    let u = |x: &[f64]| 3.0 * x.iter().map(|&t| (2.0 * PI * t).sin()).product::<f64>();
    let k = dim as f64 * 4.0 * PI * PI;
    let f = move |x: &[f64]| {
        let v = u(x);
        k * v - (v - 1.0).powi(3) + (v + 2.0).powi(2)
    };
    let n = |v: f64| -(v - 1.0).powi(3) + (v + 2.0).powi(2);
    let dn = |v: f64| -3.0 * (v - 1.0).powi(2) + 2.0 * (v + 2.0);
    let f2 = f;
    ProblemCase {
        id: "ex5_4",
        dim,
        domain: ProblemDomain::dirichlet(BoxDomain::unit_cube(dim)),
        exact: Some(field(u)),
        eigenvalue: None,
        residual: Some(Arc::new(move |x, u, _, lap| -lap + n(u) - f(x))),
        loss: LossSpec::Lsm(LsmSemilinear {
            source: field(f),
            nonlinearity: Nonlinearity::new(move |_, v| n(v), move |_, v| dn(v)),
            boundary: constant_field(0.0),
            gamma: 500.0,
        }),
        phase2: Phase2::Newton(Nonlinearity::new(
            move |x, v| n(v) - f2(x),
            move |_, v| dn(v),
        )),
        test_h: if dim == 1 { 1.0 / 1024.0 } else { 1.0 / 128.0 },
        default_epochs: 200,
    }
}

fn center(dim: usize) -> Vec<f64> {
    vec![0.5; dim]
}

/// `−Δu = λu` on `(0,1)^d`, `λ = dπ²`, `u = Π sin(π(x_i − 1))`.
fn ex5_5(dim: usize) -> ProblemCase {
    let lambda = dim as f64 * PI * PI;
    ProblemCase {
        id: "ex5_5",
        dim,
        domain: ProblemDomain::dirichlet(BoxDomain::unit_cube(dim)),
        exact: Some(field(|x| {
            x.iter().map(|&t| (PI * (t - 1.0)).sin()).product()
        })),
        eigenvalue: Some(lambda),
        residual: Some(Arc::new(move |_, u, _, lap| -lap - lambda * u)),
        loss: LossSpec::Eigen(LinearEigenJ3 {
            p: constant_field(1.0),
            q: constant_field(0.0),
            gamma: 100.0,
            x0: center(dim),
            use_boundary_factor: true,
        }),
        phase2: Phase2::Power,
        test_h: if dim == 1 { 1.0 / 512.0 } else { 1.0 / 128.0 },
        default_epochs: 300,
    }
}

pub const WELL_DEPTH: f64 = 100.0;
pub const WELL_WIDTH: f64 = 0.1;
pub const GP_BETA: f64 = 10.0;

/// `V(x) = −A Σ_c exp(−|x − c|² / (2s²))` with centres at `{0.25, 0.75}^d`.
pub fn gaussian_wells(dim: usize) -> ScalarField {
    let centres: Vec<Vec<f64>> = if dim == 1 {
        vec![vec![0.25], vec![0.75]]
    } else {
        [0.25, 0.75]
            .iter()
            .flat_map(|&a| [0.25, 0.75].iter().map(move |&b| vec![a, b]))
            .collect()
    };
    field(move |x| {
        -WELL_DEPTH
            * centres
                .iter()
                .map(|c| {
                    let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-r2 / (2.0 * WELL_WIDTH * WELL_WIDTH)).exp()
                })
                .sum::<f64>()
    })
}

/// `−Δu + Vu + βu³ = λu`, `‖u‖_0 = 1` on `(0,1)^d`.
fn ex5_6(dim: usize) -> ProblemCase {
    let v = gaussian_wells(dim);
    ProblemCase {
        id: "ex5_6",
        dim,
        domain: ProblemDomain::dirichlet(BoxDomain::unit_cube(dim)),
        exact: None,
        eigenvalue: None,
        residual: None,
        loss: LossSpec::Gp(GpEigenJ5 {
            potential: v.clone(),
            beta: GP_BETA,
            gamma: 100.0,
            x0: center(dim),
        }),
        phase2: Phase2::GpNewton {
            potential: v,
            beta: GP_BETA,
        },
        test_h: if dim == 1 { 1.0 / 512.0 } else { 1.0 / 128.0 },
        default_epochs: 300,
    }
}
