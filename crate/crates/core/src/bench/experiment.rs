//! Two-phase experiment driver: train, interpolate, iterate, measure.

use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    build_mesh, interpolate_at_nodes, l2_error, l2_norm, mass_matrix, max_norm, FemVector, Mesh,
};
use crate::network::NetworkConfig;
use crate::par::Execution;
use crate::solvers::{
    newton_nonlinear_eigen, newton_semilinear, picard_semilinear, power_eigen, two_grid_semilinear,
    IterationReport, SolverConfig,
};
use crate::variational::{network_eigenvalue, train, TrainConfig, TrainedModel};

use super::lemma::convergence_order;
use super::problems::{problem, Phase2, ProblemCase};

/// Initial guess handed to the finite element iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Nodal interpolant of the trained network.
    Dl,
    /// Nodal interpolant of the exact solution.
    Exact,
    /// The same value at every interior node.
    Constant(f64),
    /// Exact solution plus `scale` times standard normal noise per node.
    Noise(f64),
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown initial guess `{s}`"));
        match s {
            "dl" => Ok(InitKind::Dl),
            "exact" => Ok(InitKind::Exact),
            "noise" => Ok(InitKind::Noise(1.0)),
            _ => {
                let (kind, value) = s.split_once(':').ok_or_else(bad)?;
                let v: f64 = value.parse().map_err(|_| bad())?;
                match kind {
                    "constant" => Ok(InitKind::Constant(v)),
                    "noise" => Ok(InitKind::Noise(v)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

/// Which finite element iteration to run for semilinear problems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Newton,
    Picard,
    /// Two-grid with the given coarse mesh size.
    TwoGrid(f64),
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(SolverKind::Newton),
            "picard" => Ok(SolverKind::Picard),
            _ => s
                .strip_prefix("two-grid:")
                .and_then(|h| parse_h(h).ok())
                .map(SolverKind::TwoGrid)
                .ok_or_else(|| Error::Parse(format!("unknown solver `{s}`"))),
        }
    }
}

/// Parses `0.125`, `1/8` or `2^-3`.
pub fn parse_h(s: &str) -> Result<f64> {
    let bad = || Error::Parse(format!("cannot parse mesh size `{s}`"));
    let s = s.trim();
    let h = if let Some(e) = s.strip_prefix("2^") {
        2f64.powi(e.parse::<i32>().map_err(|_| bad())?)
    } else if let Some((a, b)) = s.split_once('/') {
        a.trim().parse::<f64>().map_err(|_| bad())? / b.trim().parse::<f64>().map_err(|_| bad())?
    } else {
        s.parse::<f64>().map_err(|_| bad())?
    };
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(bad())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub hs: Vec<f64>,
    /// Training epochs; the problem's default when absent.
    pub epochs: Option<usize>,
    pub init: InitKind,
    pub seed: u64,
    /// Width, depth and activation of the network; `input_dim` and `seed`
    /// are overwritten from the problem and run seed.
    pub network: Option<NetworkConfig>,
    pub train: Option<TrainConfig>,
    /// Stopping rule; `ε = 0.01 h², N_max = 15` for semilinear problems and
    /// `ε = h², N_max = 10` for eigenproblems when absent.
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub solver_kind: SolverKind,
    pub gamma: Option<f64>,
    pub x0: Option<Vec<f64>>,
}

impl RunOptions {
    pub fn new(hs: Vec<f64>, seed: u64) -> Self {
        Self {
            hs,
            epochs: None,
            init: InitKind::Dl,
            seed,
            network: None,
            train: None,
            solver: None,
            solver_kind: SolverKind::Newton,
            gamma: None,
            x0: None,
        }
    }
}

/// Experiment document: a problem id plus run options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: String,
    pub dim: usize,
    #[serde(flatten)]
    pub options: RunOptions,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn run(&self) -> Result<Vec<ResultRow>> {
        run_example(&self.problem, self.dim, &self.options)
    }
}

/// One line of a result table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub h: f64,
    pub epochs: usize,
    /// Max-norm error of the trained field at the mesh vertices (after
    /// scaling to `u(x0) = 1` for eigenproblems).
    pub e_dl: Option<f64>,
    pub iterations: Option<usize>,
    /// Final max-norm error for source problems; `L²` error of the
    /// normalised eigenfunction for linear eigenproblems.
    pub e_h: Option<f64>,
    pub order: Option<f64>,
    pub lambda_dl: Option<f64>,
    pub lambda_h: Option<f64>,
    pub lambda_err: Option<f64>,
    pub lambda_order: Option<f64>,
    pub residual: Option<f64>,
    pub converged: bool,
    pub status: String,
    pub wall_phase1: f64,
    pub wall_phase2: f64,
}

impl ResultRow {
    pub fn has_lambda(&self) -> bool {
        self.lambda_dl.is_some()
            || self.lambda_h.is_some()
            || self.lambda_err.is_some()
            || self.residual.is_some()
    }
}

fn default_solver(case: &ProblemCase, h: f64) -> SolverConfig {
    if case.is_eigen() {
        SolverConfig::new(h * h, 10)
    } else {
        SolverConfig::new(0.01 * h * h, 15)
    }
}

fn network_config(case: &ProblemCase, opts: &RunOptions) -> NetworkConfig {
    let mut cfg = opts
        .network
        .clone()
        .unwrap_or_else(|| NetworkConfig::standard(case.dim, opts.seed));
    cfg.input_dim = case.dim;
    cfg.seed = opts.seed;
    cfg
}

/// Scales `v` so that its value at `x0` is one.
fn pointwise_normalise(v: f64, at_x0: f64) -> f64 {
    v / at_x0
}

/// Network and training settings for `case` with the run's overrides applied.
pub fn case_configs(case: &ProblemCase, opts: &RunOptions) -> (NetworkConfig, TrainConfig) {
    let epochs = opts.epochs.unwrap_or(case.default_epochs);
    let mut tc = opts
        .train
        .clone()
        .unwrap_or_else(|| TrainConfig::standard(case.dim, epochs, opts.seed));
    tc.epochs = epochs;
    tc.seed = opts.seed;
    (network_config(case, opts), tc)
}

pub fn train_case(case: &ProblemCase, opts: &RunOptions) -> Result<TrainedModel> {
    let (net, tc) = case_configs(case, opts);
    train(net, &case.loss, &case.domain, &tc)
}

/// Max-norm error of the trained field on the vertices of `mesh`.
pub fn dl_error(case: &ProblemCase, model: &TrainedModel, mesh: &Mesh) -> Option<f64> {
    let exact = case.exact.as_ref()?;
    let zero = vec![0.0; mesh.num_interior()];
    match case.x0() {
        Some(x0) => {
            let (p0, u0) = (model.eval(x0), exact(x0));
            max_norm(mesh, &zero, |x| {
                pointwise_normalise(model.eval(x), p0) - pointwise_normalise(exact(x), u0)
            })
            .ok()
        }
        None => max_norm(mesh, &zero, |x| model.eval(x) - exact(x)).ok(),
    }
}

pub fn dl_eigenvalue(case: &ProblemCase, model: &TrainedModel, mesh: &Mesh) -> Result<f64> {
    match case.dim {
        1 => network_eigenvalue::<1>(&|x| model.jet(x), &case.loss, mesh),
        _ => network_eigenvalue::<2>(&|x| model.jet(x), &case.loss, mesh),
    }
}

fn initial_guess(
    case: &ProblemCase,
    model: Option<&TrainedModel>,
    mesh: &Mesh,
    init: &InitKind,
    seed: u64,
) -> Result<FemVector> {
    let exact = || {
        case.exact
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} has no closed-form solution", case.id)))
    };
    Ok(match init {
        InitKind::Dl => {
            let m = model
                .ok_or_else(|| Error::Config("no trained model for a DL initial guess".into()))?;
            interpolate_at_nodes(mesh, |x| m.eval(x))
        }
        InitKind::Exact => interpolate_at_nodes(mesh, exact()?.as_ref()),
        InitKind::Constant(v) => vec![*v; mesh.num_interior()],
        InitKind::Noise(scale) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = interpolate_at_nodes(mesh, exact()?.as_ref());
            u.into_iter()
                .map(|v| {
                    let w: f64 = StandardNormal.sample(&mut rng);
                    v + scale * w
                })
                .collect()
        }
    })
}

/// Relative error `‖u − s u^h‖_0 / ‖u‖_0` of the eigenvector, with `s`
/// aligning sign and matching the discrete norm of `I_h u`. Normalising
/// both sides in the continuous norm instead would cancel most of the
/// interpolation error.
fn eigenvector_error(case: &ProblemCase, mesh: &Mesh, u: &[f64]) -> Result<Option<f64>> {
    let Some(exact) = case.exact.as_ref() else {
        return Ok(None);
    };
    let m = mass_matrix(mesh);
    let iu = interpolate_at_nodes(mesh, exact.as_ref());
    let (nu, ni) = (l2_norm(&m, u)?, l2_norm(&m, &iu)?);
    let ne = l2_error(mesh, &vec![0.0; u.len()], exact.as_ref())?;
    if nu == 0.0 || ni == 0.0 || ne == 0.0 {
        return Ok(None);
    }
    let sign = if crate::linalg::dot(&crate::linalg::matvec(&m, u)?, &iu) < 0.0 {
        -1.0
    } else {
        1.0
    };
    let uh: Vec<f64> = u.iter().map(|v| sign * v * ni / nu).collect();
    Ok(Some(l2_error(mesh, &uh, exact.as_ref())? / ne))
}

struct CellOutcome {
    report: IterationReport,
    e_h: Option<f64>,
    lambda_err: Option<f64>,
}

fn run_phase2(
    case: &ProblemCase,
    mesh: &Mesh,
    u0: &[f64],
    cfg: &SolverConfig,
    kind: SolverKind,
) -> Result<CellOutcome> {
    let report = match &case.phase2 {
        Phase2::None => {
            return Ok(CellOutcome {
                report: IterationReport {
                    solution: u0.to_vec(),
                    ..Default::default()
                },
                e_h: None,
                lambda_err: None,
            })
        }
        Phase2::Newton(f) => match kind {
            SolverKind::Newton => newton_semilinear(mesh, f, u0, cfg)?,
            SolverKind::Picard => picard_semilinear(mesh, f, u0, cfg)?,
            SolverKind::TwoGrid(_) => unreachable!("two-grid cells start on the coarse mesh"),
        },
        Phase2::Power => power_eigen(mesh, u0, cfg)?,
        Phase2::GpNewton { potential, beta } => {
            newton_nonlinear_eigen(mesh, potential, *beta, u0, cfg)?
        }
    };
    let (e_h, lambda_err) = match &case.phase2 {
        Phase2::Newton(_) => {
            let exact = case
                .exact
                .as_ref()
                .expect("semilinear cases have exact solutions");
            (
                Some(max_norm(mesh, &report.solution, exact.as_ref())?),
                None,
            )
        }
        Phase2::Power => (
            eigenvector_error(case, mesh, &report.solution)?,
            match (case.eigenvalue, report.lambda()) {
                (Some(l), Some(lh)) => Some((l - lh).abs()),
                _ => None,
            },
        ),
        _ => (None, None),
    };
    Ok(CellOutcome {
        report,
        e_h,
        lambda_err,
    })
}

fn run_cell(
    case: &ProblemCase,
    model: Option<&TrainedModel>,
    opts: &RunOptions,
    h: f64,
    index: usize,
) -> Result<ResultRow> {
    let start = Instant::now();
    let mesh = build_mesh(&case.domain.bounds, h)?;
    let cfg = opts.solver.unwrap_or_else(|| default_solver(case, h));
    let mut row = ResultRow {
        h,
        epochs: if model.is_some() {
            opts.epochs.unwrap_or(case.default_epochs)
        } else {
            0
        },
        status: "ok".into(),
        ..Default::default()
    };
    if let Some(m) = model {
        row.e_dl = dl_error(case, m, &mesh);
        if case.is_eigen() {
            row.lambda_dl = dl_eigenvalue(case, m, &mesh).ok();
        }
    }
    let outcome = match (opts.solver_kind, &case.phase2) {
        (SolverKind::TwoGrid(coarse_h), Phase2::Newton(f)) => {
            let coarse = build_mesh(&case.domain.bounds, coarse_h)?;
            let u0 = initial_guess(case, model, &coarse, &opts.init, opts.seed ^ index as u64)?;
            let report = two_grid_semilinear(&coarse, &mesh, f, &u0, &cfg)?;
            let exact = case
                .exact
                .as_ref()
                .expect("semilinear cases have exact solutions");
            let e_h = Some(max_norm(&mesh, &report.solution, exact.as_ref())?);
            CellOutcome {
                report,
                e_h,
                lambda_err: None,
            }
        }
        _ => {
            let u0 = initial_guess(case, model, &mesh, &opts.init, opts.seed ^ index as u64)?;
            run_phase2(case, &mesh, &u0, &cfg, opts.solver_kind)?
        }
    };
    let r = &outcome.report;
    if !matches!(case.phase2, Phase2::None) {
        row.iterations = Some(r.iterations);
    }
    row.e_h = outcome.e_h;
    row.lambda_h = r.lambda();
    row.lambda_err = outcome.lambda_err;
    row.residual = r.residual;
    row.converged = r.converged;
    if r.diverged {
        row.status = "diverged".into();
    } else if r.unstable {
        row.status = "unstable".into();
    } else if !r.converged && !matches!(case.phase2, Phase2::None) {
        row.status = "max_iter".into();
    }
    row.wall_phase2 = start.elapsed().as_secs_f64();
    Ok(row)
}

/// Fills `order` / `lambda_order` on every row that has a coarser sibling
/// with twice its mesh size.
pub fn attach_orders(rows: &mut [ResultRow]) {
    for i in 1..rows.len() {
        let (a, b) = (&rows[i - 1], &rows[i]);
        if convergence_order(&[1.0, 1.0], &[a.h, b.h]).is_err() {
            continue;
        }
        let order = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => convergence_order(&[x, y], &[a.h, b.h]).ok().map(|o| o[0]),
            _ => None,
        };
        let o = order(a.e_h, b.e_h);
        let lo = order(a.lambda_err, b.lambda_err);
        rows[i].order = o;
        rows[i].lambda_order = lo;
    }
}

/// Runs training once and the finite element phase for every mesh size.
/// Failures inside a cell are recorded in that row's status.
pub fn run_example(id: &str, dim: usize, opts: &RunOptions) -> Result<Vec<ResultRow>> {
    let mut case = problem(id, dim)?;
    if let Some(g) = opts.gamma {
        case.loss.set_gamma(g);
    }
    if let Some(x0) = &opts.x0 {
        case.loss.set_x0(x0.clone());
    }
    if opts.hs.is_empty() {
        return Err(Error::Config("at least one mesh size is required".into()));
    }
    let t0 = Instant::now();
    let model = match opts.init {
        InitKind::Dl => match train_case(&case, opts) {
            Ok(m) => Some(m),
            Err(e) => {
                return Ok(opts
                    .hs
                    .iter()
                    .map(|&h| ResultRow {
                        h,
                        status: format!("error: {e}"),
                        ..Default::default()
                    })
                    .collect())
            }
        },
        _ => None,
    };
    let wall1 = t0.elapsed().as_secs_f64();
    let cells: Vec<(usize, f64)> = opts.hs.iter().copied().enumerate().collect();
    let mut rows = Execution::default().map(&cells, |&(i, h)| {
        run_cell(&case, model.as_ref(), opts, h, i).unwrap_or_else(|e| ResultRow {
            h,
            status: format!("error: {e}"),
            ..Default::default()
        })
    });
    for r in &mut rows {
        r.wall_phase1 = wall1;
    }
    attach_orders(&mut rows);
    Ok(rows)
}

/// One cell of a network-size sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub width: usize,
    pub depth: usize,
    pub row: ResultRow,
}

/// Runs `id` at a single mesh size for every `(width, depth)` pair.
pub fn sweep(
    id: &str,
    dim: usize,
    h: f64,
    widths: &[usize],
    depths: &[usize],
    epochs: usize,
    seed: u64,
) -> Result<Vec<SweepCell>> {
    let mut out = Vec::new();
    for &depth in depths {
        for &width in widths {
            let mut opts = RunOptions::new(vec![h], seed);
            opts.epochs = Some(epochs);
            let mut net = NetworkConfig::standard(dim, seed);
            net.width = width;
            net.depth = depth;
            opts.network = Some(net);
            let row = run_example(id, dim, &opts)?.remove(0);
            out.push(SweepCell { width, depth, row });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mesh_sizes() {
        assert_eq!(parse_h("2^-3").unwrap(), 0.125);
        assert_eq!(parse_h("1/8").unwrap(), 0.125);
        assert_eq!(parse_h("0.125").unwrap(), 0.125);
        assert!(parse_h("0").is_err() && parse_h("x").is_err());
    }

    #[test]
    fn parses_initial_guesses() {
        assert_eq!("dl".parse::<InitKind>().unwrap(), InitKind::Dl);
        assert_eq!(
            "constant:-1".parse::<InitKind>().unwrap(),
            InitKind::Constant(-1.0)
        );
        assert_eq!("noise".parse::<InitKind>().unwrap(), InitKind::Noise(1.0));
        assert_eq!(
            "noise:2.5".parse::<InitKind>().unwrap(),
            InitKind::Noise(2.5)
        );
        assert!("constant".parse::<InitKind>().is_err());
        assert_eq!(
            "two-grid:2^-5".parse::<SolverKind>().unwrap(),
            SolverKind::TwoGrid(1.0 / 32.0)
        );
    }

    #[test]
    fn exact_start_skips_training() {
        let mut opts = RunOptions::new(vec![1.0 / 64.0, 1.0 / 128.0], 0);
        opts.init = InitKind::Exact;
        let rows = run_example("ex5_4", 1, &opts).unwrap();
        assert_eq!(rows[0].epochs, 0);
        assert!(rows
            .iter()
            .all(|r| r.converged && r.iterations.unwrap() <= 3));
        assert!(rows[1].order.is_some() && rows[0].order.is_none());
    }
}
