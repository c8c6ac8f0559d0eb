//! Self-checks exposed through the CLI `check` command.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{fd_partials, Activation};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_load, assemble_stiffness, build_mesh, interpolate_at_nodes, l2_error, mass_matrix,
    BoxDomain,
};
use crate::linalg::{solve_spd, DEFAULT_CG_TOL};
use crate::network::{Architecture, Network, NetworkConfig, ParamVector};
use crate::par::Execution;
use crate::solvers::{newton_semilinear, power_eigen, SolverConfig};
use crate::variational::{draw_batches, evaluate_loss, Batches, TrainConfig};

use super::lemma::{check_recursion_bound, convergence_order};
use super::problems::{problem, Phase2, ProblemCase};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Gradients,
    Fem,
    LemmaB,
    Orders,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Gradients, Suite::Fem, Suite::LemmaB, Suite::Orders];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradients => "gradients",
            Suite::Fem => "fem",
            Suite::LemmaB => "lemma-b",
            Suite::Orders => "orders",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown check suite `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

pub fn run_suite(suite: Suite) -> Result<Vec<CheckOutcome>> {
    match suite {
        Suite::Gradients => gradient_checks(),
        Suite::Fem => fem_checks(),
        Suite::LemmaB => Ok(vec![lemma_grid()?]),
        Suite::Orders => order_checks(),
    }
}

/// Reverse-mode gradient of a case's loss against central differences on
/// `coords` random coordinates, for a small tanh network.
pub fn gradient_check(case: &ProblemCase, seed: u64, coords: usize, step: f64) -> Result<f64> {
    let mut cfg = NetworkConfig::standard(case.dim, seed);
    cfg.arch = Architecture::Resnet;
    cfg.width = 8;
    cfg.depth = 2;
    cfg.activation = Activation::Tanh;
    let mut net = Network::init(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in net.params.as_mut_slice() {
        *p += 0.1 * rng.gen_range(-1.0..1.0);
    }
    let mut train = TrainConfig::standard(case.dim, 1, seed);
    train.batch_interior = 24;
    train.batch_boundary = 12;
    match case.dim {
        1 => gradient_check_dim::<1>(case, &net, &train, coords, step, &mut rng),
        _ => gradient_check_dim::<2>(case, &net, &train, coords, step, &mut rng),
    }
}

fn gradient_check_dim<const D: usize>(
    case: &ProblemCase,
    net: &Network,
    train: &TrainConfig,
    coords: usize,
    step: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let batches: Batches<D> = draw_batches(&case.domain, &case.loss, train, 0)?;
    let (_, grad) = evaluate_loss(
        net,
        &case.loss,
        &case.domain,
        &batches,
        Execution::Sequential,
    )?;
    let n = grad.len();
    let picked = sample(rng, n, coords.min(n)).into_vec();
    let layout = net.params.layout().to_vec();
    let loss_at = |p: &[f64]| {
        let other = Network {
            config: net.config.clone(),
            params: ParamVector::new(p.to_vec(), layout.clone()).expect("same layout"),
        };
        evaluate_loss(
            &other,
            &case.loss,
            &case.domain,
            &batches,
            Execution::Sequential,
        )
        .map(|(v, _)| v)
        .unwrap_or(f64::NAN)
    };
    let fd = fd_partials(
        loss_at,
        net.params.as_slice(),
        step,
        &picked,
        Execution::default(),
    )?;
    Ok(picked
        .iter()
        .zip(&fd)
        .map(|(&i, &f)| (grad[i] - f).abs() / grad[i].abs().max(f.abs()).max(1e-6))
        .fold(0.0, f64::max))
}

fn gradient_checks() -> Result<Vec<CheckOutcome>> {
    [
        ("ex5_4", 1),
        ("ex5_1", 1),
        ("ex5_2", 2),
        ("ex5_5", 1),
        ("ex5_6", 1),
    ]
    .iter()
    .map(|&(id, dim)| {
        let case = problem(id, dim)?;
        let err = gradient_check(&case, 7, 100, 1e-5)?;
        Ok(CheckOutcome::new(
            format!("gradient {}", case.loss.name()),
            err <= 1e-4,
            format!("max relative error {err:.2e}"),
        ))
    })
    .collect()
}

fn fem_checks() -> Result<Vec<CheckOutcome>> {
    let h = 1.0 / 16.0;
    let mesh = build_mesh(&BoxDomain::unit_cube(1), h)?;
    let (a, m) = (assemble_stiffness(&mesh, |_| 1.0), mass_matrix(&mesh));
    let n = mesh.num_interior();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let (ea, em) = match i.abs_diff(j) {
                0 => (2.0 / h, 2.0 * h / 3.0),
                1 => (-1.0 / h, h / 6.0),
                _ => (0.0, 0.0),
            };
            dev = dev.max((a.get(i, j) - ea).abs() / ea.abs().max(1.0));
            dev = dev.max((m.get(i, j) - em).abs() / em.abs().max(1.0));
        }
    }
    let tri = CheckOutcome::new(
        "1D tridiagonals",
        dev <= 1e-14,
        format!("max deviation {dev:.2e}"),
    );

    let exact = |x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin();
    let hs = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    let errs = hs
        .iter()
        .map(|&h| {
            let mesh = build_mesh(&BoxDomain::unit_cube(2), h)?;
            let a = assemble_stiffness(&mesh, |_| 1.0);
            let b = assemble_load(&mesh, |x| 2.0 * PI * PI * exact(x));
            let u = solve_spd(&a, &b, DEFAULT_CG_TOL)?;
            l2_error(&mesh, &u, exact)
        })
        .collect::<Result<Vec<_>>>()?;
    let orders = convergence_order(&errs, &hs)?;
    let ok = orders.iter().all(|o| (o - 2.0).abs() <= 0.05);
    Ok(vec![
        tri,
        CheckOutcome::new("2D Poisson L2 order", ok, format!("orders {orders:.3?}")),
    ])
}

/// `check_recursion_bound` on a 20×20 grid strictly inside `(0, ½) × (0, ¼)`.
pub fn lemma_grid() -> Result<CheckOutcome> {
    let mut failures = 0;
    for i in 1..=20 {
        for j in 1..=20 {
            let (a0, b) = (0.5 * i as f64 / 21.0, 0.25 * j as f64 / 21.0);
            if !check_recursion_bound(a0, b, 60)? {
                failures += 1;
            }
        }
    }
    Ok(CheckOutcome::new(
        "recursion bound grid",
        failures == 0,
        format!("{failures} of 400 failed"),
    ))
}

/// Orders of the converged discrete solutions, started from the exact
/// solution so no training is involved.
fn order_checks() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let case = problem("ex5_4", 1)?;
    let Phase2::Newton(f) = &case.phase2 else {
        unreachable!()
    };
    let exact = case.exact.clone().expect("closed form");
    let hs: Vec<f64> = (7..=10).map(|k| 2f64.powi(-k)).collect();
    let errs = hs
        .iter()
        .map(|&h| {
            let mesh = build_mesh(&case.domain.bounds, h)?;
            let u0 = interpolate_at_nodes(&mesh, exact.as_ref());
            let r = newton_semilinear(&mesh, f, &u0, &SolverConfig::new(0.01 * h * h, 15))?;
            crate::fem::max_norm(&mesh, &r.solution, exact.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    let o = convergence_order(&errs, &hs)?;
    out.push(CheckOutcome::new(
        "semilinear 1D max-norm order",
        o.iter().all(|x| (x - 2.0).abs() <= 0.1),
        format!("orders {o:.3?}"),
    ));

    let case = problem("ex5_5", 1)?;
    let exact = case.exact.clone().expect("closed form");
    let lambda = case.eigenvalue.expect("known eigenvalue");
    let hs: Vec<f64> = (5..=8).map(|k| 2f64.powi(-k)).collect();
    let errs = hs
        .iter()
        .map(|&h| {
            let mesh = build_mesh(&case.domain.bounds, h)?;
            let u0 = interpolate_at_nodes(&mesh, exact.as_ref());
            let r = power_eigen(&mesh, &u0, &SolverConfig::new(1e-12, 50))?;
            Ok((lambda - r.lambda().unwrap_or(f64::NAN)).abs())
        })
        .collect::<Result<Vec<_>>>()?;
    let o = convergence_order(&errs, &hs)?;
    out.push(CheckOutcome::new(
        "eigenvalue 1D order",
        o.iter().all(|x| (x - 2.0).abs() <= 0.1),
        format!("orders {o:.3?}"),
    ));
    Ok(out)
}
