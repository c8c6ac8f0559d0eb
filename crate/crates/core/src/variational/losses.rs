//! Loss functionals recorded on a [`Tape`].

use std::fmt;
use std::sync::Arc;

use crate::autodiff::{Part, SpatialJet, Tape, Var};
use crate::error::{check_dim, Error, Result};
use crate::fem::BoxDomain;
use crate::network::{record_network, Network};

use super::domain::{BoundaryRole, ProblemDomain};

/// Denominators of the ratio losses at or below this are rejected.
const DEGENERATE_DENOMINATOR: f64 = 1e-30;

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

pub fn field(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> ScalarField {
    Arc::new(f)
}

pub fn constant_field(c: f64) -> ScalarField {
    Arc::new(move |_| c)
}

/// Pointwise nonlinearity `F(x, u)` together with `∂F/∂u`.
#[derive(Clone)]
pub struct Nonlinearity {
    value: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
    derivative: Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>,
}

impl Nonlinearity {
    pub fn new(
        value: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        }
    }

    pub fn zero() -> Self {
        Self::new(|_, _| 0.0, |_, _| 0.0)
    }

    pub fn eval(&self, x: &[f64], u: f64) -> f64 {
        (self.value)(x, u)
    }

    pub fn derivative(&self, x: &[f64], u: f64) -> f64 {
        (self.derivative)(x, u)
    }
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Nonlinearity(..)")
    }
}

/// `|−Δφ + F(x, φ) − f|²` in the interior, `|φ − g|²` on the boundary.
#[derive(Clone)]
pub struct LsmSemilinear {
    pub source: ScalarField,
    pub nonlinearity: Nonlinearity,
    pub boundary: ScalarField,
    pub gamma: f64,
}

/// Energy `½(p|∇φ|² + qφ²) − fφ` with a boundary penalty.
#[derive(Clone)]
pub struct RitzLinear {
    pub p: ScalarField,
    pub q: ScalarField,
    pub f: ScalarField,
    pub gamma: f64,
}

/// Energy of `−Δu + u = f` with friction `g|φ|` on the contact part.
#[derive(Clone)]
pub struct FrictionJ2 {
    pub f: ScalarField,
    pub g: ScalarField,
    pub gamma: f64,
}

/// Rayleigh quotient of `−∇·(p∇u) + qu = λu` with a point normalisation.
#[derive(Clone)]
pub struct LinearEigenJ3 {
    pub p: ScalarField,
    pub q: ScalarField,
    pub gamma: f64,
    pub x0: Vec<f64>,
    pub use_boundary_factor: bool,
}

/// Energy quotient of `−Δu + Vu + βu³ = λu`.
#[derive(Clone)]
pub struct GpEigenJ5 {
    pub potential: ScalarField,
    pub beta: f64,
    pub gamma: f64,
    pub x0: Vec<f64>,
}

#[derive(Clone)]
pub enum LossSpec {
    Lsm(LsmSemilinear),
    Ritz(RitzLinear),
    Friction(FrictionJ2),
    Eigen(LinearEigenJ3),
    Gp(GpEigenJ5),
}

impl fmt::Debug for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Lsm(s) => write!(f, "Lsm {{ gamma: {} }}", s.gamma),
            LossSpec::Ritz(s) => write!(f, "Ritz {{ gamma: {} }}", s.gamma),
            LossSpec::Friction(s) => write!(f, "Friction {{ gamma: {} }}", s.gamma),
            LossSpec::Eigen(s) => write!(f, "Eigen {{ gamma: {}, x0: {:?} }}", s.gamma, s.x0),
            LossSpec::Gp(s) => write!(
                f,
                "Gp {{ beta: {}, gamma: {}, x0: {:?} }}",
                s.beta, s.gamma, s.x0
            ),
        }
    }
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Lsm(_) => "lsm",
            LossSpec::Ritz(_) => "ritz",
            LossSpec::Friction(_) => "friction_j2",
            LossSpec::Eigen(_) => "eigen_j3",
            LossSpec::Gp(_) => "gp_j5",
        }
    }

    pub fn gamma(&self) -> f64 {
        match self {
            LossSpec::Lsm(s) => s.gamma,
            LossSpec::Ritz(s) => s.gamma,
            LossSpec::Friction(s) => s.gamma,
            LossSpec::Eigen(s) => s.gamma,
            LossSpec::Gp(s) => s.gamma,
        }
    }

    pub fn set_gamma(&mut self, gamma: f64) {
        match self {
            LossSpec::Lsm(s) => s.gamma = gamma,
            LossSpec::Ritz(s) => s.gamma = gamma,
            LossSpec::Friction(s) => s.gamma = gamma,
            LossSpec::Eigen(s) => s.gamma = gamma,
            LossSpec::Gp(s) => s.gamma = gamma,
        }
    }

    /// Replaces the normalisation point of eigenvalue losses; a no-op otherwise.
    pub fn set_x0(&mut self, x0: Vec<f64>) {
        match self {
            LossSpec::Eigen(s) => s.x0 = x0,
            LossSpec::Gp(s) => s.x0 = x0,
            _ => {}
        }
    }

    /// Whether the trial function is `B · ψ` rather than the network itself.
    pub fn uses_boundary_factor(&self) -> bool {
        match self {
            LossSpec::Eigen(s) => s.use_boundary_factor,
            LossSpec::Gp(_) => true,
            _ => false,
        }
    }

    /// Only the least-squares residual needs second derivatives.
    pub fn needs_hessian(&self) -> bool {
        matches!(self, LossSpec::Lsm(_))
    }

    /// Number of independent interior batches the loss consumes.
    pub fn interior_batches(&self) -> usize {
        match self {
            LossSpec::Eigen(_) => 2,
            LossSpec::Gp(_) => 3,
            _ => 1,
        }
    }

    pub fn needs_boundary_batches(&self) -> bool {
        !matches!(self, LossSpec::Eigen(_) | LossSpec::Gp(_))
    }

    pub fn validate(&self, domain: &ProblemDomain) -> Result<()> {
        let gamma = self.gamma();
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::Config(format!(
                "penalty gamma must be finite and non-negative, got {gamma}"
            )));
        }
        let x0 = match self {
            LossSpec::Eigen(s) => Some(&s.x0),
            LossSpec::Gp(s) => {
                if !(s.beta >= 0.0) {
                    return Err(Error::Config(format!(
                        "beta must be non-negative, got {}",
                        s.beta
                    )));
                }
                Some(&s.x0)
            }
            _ => None,
        };
        if let Some(x0) = x0 {
            check_dim(domain.dim(), x0.len())?;
            let b = &domain.bounds;
            if x0
                .iter()
                .enumerate()
                .any(|(i, &x)| !(b.lower[i] < x && x < b.upper[i]))
            {
                return Err(Error::Config(format!(
                    "x0 = {x0:?} is not strictly interior"
                )));
            }
        }
        if matches!(self, LossSpec::Friction(_))
            && domain.pieces_with(BoundaryRole::Contact).next().is_none()
        {
            return Err(Error::Config(
                "friction loss needs a contact boundary piece".into(),
            ));
        }
        Ok(())
    }
}

/// Something that can be recorded as `φ(x)` on a tape.
pub trait TrialFunction<const D: usize>: Sync {
    /// Trainable parameters; the tape is built over this slice.
    fn params(&self) -> &[f64];
    fn record(&self, tape: &mut Tape<'_, D>, x: &[f64; D]) -> Var;
}

impl<const D: usize> TrialFunction<D> for Network {
    fn params(&self) -> &[f64] {
        self.params.as_slice()
    }

    fn record(&self, tape: &mut Tape<'_, D>, x: &[f64; D]) -> Var {
        record_network(tape, &self.config, 0, x)
    }
}

/// A closed-form field with no trainable parameters.
#[derive(Clone)]
pub struct FrozenField<const D: usize> {
    jet: Arc<dyn Fn(&[f64; D]) -> SpatialJet<D> + Send + Sync>,
}

impl<const D: usize> FrozenField<D> {
    pub fn new(jet: impl Fn(&[f64; D]) -> SpatialJet<D> + Send + Sync + 'static) -> Self {
        Self { jet: Arc::new(jet) }
    }
}

impl<const D: usize> TrialFunction<D> for FrozenField<D> {
    fn params(&self) -> &[f64] {
        &[]
    }

    fn record(&self, tape: &mut Tape<'_, D>, x: &[f64; D]) -> Var {
        tape.constant((self.jet)(x))
    }
}

/// `B(x) = Π (x_i − a_i)(b_i − x_i)` as a jet.
pub fn boundary_factor<const D: usize>(x: &[f64; D], domain: &BoxDomain) -> SpatialJet<D> {
    let mut out = SpatialJet::constant(1.0);
    for i in 0..D {
        let (a, b) = (domain.lower[i], domain.upper[i]);
        let mut q = SpatialJet::constant((x[i] - a) * (b - x[i]));
        q.grad[i] = a + b - 2.0 * x[i];
        q.hess[i][i] = -2.0;
        out = out.mul(&q);
    }
    out
}

/// Sample points for one loss evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batches<const D: usize> {
    /// Independent interior batches.
    pub interior: Vec<Vec<[f64; D]>>,
    /// One batch per boundary piece of the domain, in piece order.
    pub boundary: Vec<Vec<[f64; D]>>,
}

impl<const D: usize> Batches<D> {
    fn interior(&self, k: usize) -> Result<&[[f64; D]]> {
        self.interior
            .get(k)
            .map(Vec::as_slice)
            .filter(|b| !b.is_empty())
            .ok_or_else(|| Error::Config(format!("interior batch {k} is missing or empty")))
    }

    /// Concatenated batches of all pieces with `role`.
    fn boundary(&self, domain: &ProblemDomain, role: BoundaryRole) -> Result<Vec<[f64; D]>> {
        let mut out = Vec::new();
        for (k, _) in domain.pieces_with(role) {
            out.extend_from_slice(self.boundary.get(k).map_or(&[][..], Vec::as_slice));
        }
        if out.is_empty() {
            return Err(Error::Config(format!(
                "no boundary samples for role {role:?}"
            )));
        }
        Ok(out)
    }
}

/// `φ(x)` with the boundary factor applied when requested.
fn trial<const D: usize, M: TrialFunction<D>>(
    tape: &mut Tape<'_, D>,
    model: &M,
    x: &[f64; D],
    factor: Option<&BoxDomain>,
) -> Var {
    let psi = model.record(tape, x);
    match factor {
        Some(b) => {
            let bx = tape.constant(boundary_factor(x, b));
            tape.mul(bx, psi)
        }
        None => psi,
    }
}

fn penalty_term<const D: usize, M: TrialFunction<D>>(
    tape: &mut Tape<'_, D>,
    model: &M,
    x0: &[f64],
    gamma: f64,
    factor: Option<&BoxDomain>,
) -> Result<Var> {
    check_dim(D, x0.len())?;
    let x0: [f64; D] = std::array::from_fn(|i| x0[i]);
    let phi = trial(tape, model, &x0, factor);
    let v = tape.component(phi, Part::Value);
    let one = tape.scalar(1.0);
    let d = tape.sub(v, one);
    let sq = tape.square(d);
    Ok(tape.scale(sq, gamma))
}

fn nonneg_denominator<const D: usize>(tape: &Tape<'_, D>, v: Var) -> Result<()> {
    let d = tape.value(v);
    if d <= DEGENERATE_DENOMINATOR || !d.is_finite() {
        return Err(Error::DegenerateNetwork(format!(
            "denominator batch mean {d:e} is not positive"
        )));
    }
    Ok(())
}

/// Least-squares residual loss. The tape must track Hessians.
pub fn loss_lsm<'p, const D: usize, M: TrialFunction<D>>(
    tape: &mut Tape<'p, D>,
    model: &M,
    spec: &LsmSemilinear,
    domain: &ProblemDomain,
    batches: &Batches<D>,
) -> Result<Var> {
    if !tape.tracks_hessian() {
        return Err(Error::Config(
            "least-squares loss needs a tape with Hessian tracking".into(),
        ));
    }
    let interior = tape.batch_mean(batches.interior(0)?, 1, 1, |t, x| {
        let x = &x[0];
        let phi = model.record(t, x);
        let lap = t.component(phi, Part::Laplacian);
        let u = t.component(phi, Part::Value);
        let n = spec.nonlinearity.eval(x, t.value(u));
        let dn = spec.nonlinearity.derivative(x, t.value(u));
        let nl = t.map(u, [n, dn, 0.0, 0.0]);
        let minus_lap = t.scale(lap, -1.0);
        let lhs = t.add(minus_lap, nl);
        let f = t.scalar((spec.source)(x));
        let r = t.sub(lhs, f);
        vec![t.square(r)]
    });
    let boundary = tape.batch_mean(
        &batches.boundary(domain, BoundaryRole::Dirichlet)?,
        1,
        1,
        |t, x| {
            let x = &x[0];
            let phi = model.record(t, x);
            let u = t.component(phi, Part::Value);
            let g = t.scalar((spec.boundary)(x));
            let r = t.sub(u, g);
            vec![t.square(r)]
        },
    );
    let pen = tape.scale(boundary[0], spec.gamma);
    Ok(tape.add(interior[0], pen))
}

pub fn loss_ritz_linear<'p, const D: usize, M: TrialFunction<D>>(
    tape: &mut Tape<'p, D>,
    model: &M,
    spec: &RitzLinear,
    domain: &ProblemDomain,
    batches: &Batches<D>,
) -> Result<Var> {
    let interior = tape.batch_mean(batches.interior(0)?, 1, 1, |t, x| {
        let x = &x[0];
        let phi = model.record(t, x);
        let g2 = t.grad_norm_sq(phi);
        let u = t.component(phi, Part::Value);
        let u2 = t.square(u);
        let a = t.scale(g2, (spec.p)(x));
        let b = t.scale(u2, (spec.q)(x));
        let ab = t.add(a, b);
        let half = t.scale(ab, 0.5);
        let fu = t.scale(u, (spec.f)(x));
        vec![t.sub(half, fu)]
    });
    let boundary = tape.batch_mean(
        &batches.boundary(domain, BoundaryRole::Dirichlet)?,
        1,
        1,
        |t, x| {
            let phi = model.record(t, &x[0]);
            let u = t.component(phi, Part::Value);
            vec![t.square(u)]
        },
    );
    let e = tape.scale(interior[0], domain.volume());
    let pen = tape.scale(boundary[0], spec.gamma);
    Ok(tape.add(e, pen))
}

pub fn loss_friction_j2<'p, const D: usize, M: TrialFunction<D>>(
    tape: &mut Tape<'p, D>,
    model: &M,
    spec: &FrictionJ2,
    domain: &ProblemDomain,
    batches: &Batches<D>,
) -> Result<Var> {
    let interior = tape.batch_mean(batches.interior(0)?, 1, 1, |t, x| {
        let x = &x[0];
        let phi = model.record(t, x);
        let g2 = t.grad_norm_sq(phi);
        let u = t.component(phi, Part::Value);
        let u2 = t.square(u);
        let ab = t.add(g2, u2);
        let half = t.scale(ab, 0.5);
        let fu = t.scale(u, (spec.f)(x));
        vec![t.sub(half, fu)]
    });
    let contact = tape.batch_mean(
        &batches.boundary(domain, BoundaryRole::Contact)?,
        1,
        1,
        |t, x| {
            let x = &x[0];
            let phi = model.record(t, x);
            let u = t.component(phi, Part::Value);
            let a = t.abs(u);
            vec![t.scale(a, (spec.g)(x))]
        },
    );
    let dirichlet = tape.batch_mean(
        &batches.boundary(domain, BoundaryRole::Dirichlet)?,
        1,
        1,
        |t, x| {
            let phi = model.record(t, &x[0]);
            let u = t.component(phi, Part::Value);
            let u2 = t.square(u);
            vec![t.scale(u2, spec.gamma)]
        },
    );
    let measure = |role| {
        domain
            .pieces_with(role)
            .map(|(_, p)| p.measure())
            .sum::<f64>()
    };
    let terms = [
        tape.scale(interior[0], domain.volume()),
        tape.scale(contact[0], measure(BoundaryRole::Contact)),
        tape.scale(dirichlet[0], measure(BoundaryRole::Dirichlet)),
    ];
    Ok(tape.sum(&terms))
}

/// Ratio of batch means plus the point penalty. Returns `(loss, ratio)`.
pub fn loss_eigen_j3_parts<'p, const D: usize, M: TrialFunction<D>>(
    tape: &mut Tape<'p, D>,
    model: &M,
    spec: &LinearEigenJ3,
    domain: &ProblemDomain,
    batches: &Batches<D>,
) -> Result<(Var, Var)> {
    let factor = spec.use_boundary_factor.then_some(&domain.bounds);
    let num = tape.batch_mean(batches.interior(0)?, 1, 1, |t, x| {
        let x = &x[0];
        let phi = trial(t, model, x, factor);
        let g2 = t.grad_norm_sq(phi);
        let u = t.component(phi, Part::Value);
        let u2 = t.square(u);
        let a = t.scale(g2, (spec.p)(x));
        let b = t.scale(u2, (spec.q)(x));
        vec![t.add(a, b)]
    });
    let den = tape.batch_mean(batches.interior(1)?, 1, 1, |t, x| {
        let phi = trial(t, model, &x[0], factor);
        let u = t.component(phi, Part::Value);
        vec![t.square(u)]
    });
    nonneg_denominator(tape, den[0])?;
    let inv = tape.reciprocal(den[0]);
    let ratio = tape.mul(num[0], inv);
    let pen = penalty_term(tape, model, &spec.x0, spec.gamma, factor)?;
    Ok((tape.add(ratio, pen), ratio))
}

pub fn loss_eigen_j3<'p, const D: usize, M: TrialFunction<D>>(
    tape: &mut Tape<'p, D>,
    model: &M,
    spec: &LinearEigenJ3,
    domain: &ProblemDomain,
    batches: &Batches<D>,
) -> Result<Var> {
    Ok(loss_eigen_j3_parts(tape, model, spec, domain, batches)?.0)
}

/// Energy quotient with the quartic interaction term. The interaction
/// denominator pairs the `i`-th points of the second and third batches.
pub fn loss_gp_j5<'p, const D: usize, M: TrialFunction<D>>(
    tape: &mut Tape<'p, D>,
    model: &M,
    spec: &GpEigenJ5,
    domain: &ProblemDomain,
    batches: &Batches<D>,
) -> Result<Var> {
    let factor = Some(&domain.bounds);
    let xi = tape.batch_mean(batches.interior(0)?, 1, 2, |t, x| {
        let x = &x[0];
        let phi = trial(t, model, x, factor);
        let g2 = t.grad_norm_sq(phi);
        let u = t.component(phi, Part::Value);
        let u2 = t.square(u);
        let a = t.scale(g2, 1.0);
        let b = t.scale(u2, (spec.potential)(x));
        let energy = t.add(a, b);
        vec![energy, t.square(u2)]
    });
    let (eta, zeta) = (batches.interior(1)?, batches.interior(2)?);
    check_dim(eta.len(), zeta.len())?;
    let pairs: Vec<[f64; D]> = eta.iter().zip(zeta).flat_map(|(a, b)| [*a, *b]).collect();
    let ez = tape.batch_mean(&pairs, 2, 2, |t, x| {
        let pa = trial(t, model, &x[0], factor);
        let pb = trial(t, model, &x[1], factor);
        let ua = t.component(pa, Part::Value);
        let ub = t.component(pb, Part::Value);
        let a2 = t.square(ua);
        let b2 = t.square(ub);
        vec![a2, t.mul(a2, b2)]
    });
    nonneg_denominator(tape, ez[0])?;
    let inv = tape.reciprocal(ez[0]);
    let ratio = tape.mul(xi[0], inv);
    let quartic = if spec.beta != 0.0 {
        nonneg_denominator(tape, ez[1])?;
        let inv2 = tape.reciprocal(ez[1]);
        let r2 = tape.mul(xi[1], inv2);
        tape.scale(r2, spec.beta / (2.0 * domain.volume()))
    } else {
        tape.scalar(0.0)
    };
    let main = tape.add(ratio, quartic);
    let pen = penalty_term(tape, model, &spec.x0, spec.gamma, factor)?;
    Ok(tape.add(main, pen))
}

/// Dispatches to the loss selected by `spec`.
pub fn record_loss<'p, const D: usize, M: TrialFunction<D>>(
    tape: &mut Tape<'p, D>,
    model: &M,
    spec: &LossSpec,
    domain: &ProblemDomain,
    batches: &Batches<D>,
) -> Result<Var> {
    match spec {
        LossSpec::Lsm(s) => loss_lsm(tape, model, s, domain, batches),
        LossSpec::Ritz(s) => loss_ritz_linear(tape, model, s, domain, batches),
        LossSpec::Friction(s) => loss_friction_j2(tape, model, s, domain, batches),
        LossSpec::Eigen(s) => loss_eigen_j3(tape, model, s, domain, batches),
        LossSpec::Gp(s) => loss_gp_j5(tape, model, s, domain, batches),
    }
}
