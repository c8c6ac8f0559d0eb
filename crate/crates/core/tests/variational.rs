//! Loss estimators on frozen closed-form fields and small networks,
//! checked against quadrature and against each other.

use std::f64::consts::PI;

use deepfem::autodiff::{Activation, SpatialJet, Tape};
use deepfem::bench::{gaussian_wells, problem};
use deepfem::fem::{build_mesh, BoxDomain};
use deepfem::network::{Network, NetworkConfig};
use deepfem::par::Execution;
use deepfem::variational::{
    boundary_factor, constant_field, draw_batches, evaluate_loss, field, loss_eigen_j3,
    loss_eigen_j3_parts, loss_friction_j2, loss_gp_j5, loss_lsm, loss_ritz_linear,
    network_eigenvalue, sample_uniform, train, Adam, AdamConfig, Batches, FrictionJ2, FrozenField,
    GpEigenJ5, LinearEigenJ3, LossSpec, LsmSemilinear, Nonlinearity, ProblemDomain, Region,
    RitzLinear, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn value<const D: usize>(
    f: impl FnOnce(&mut Tape<'_, D>) -> deepfem::Result<deepfem::autodiff::Var>,
) -> f64 {
    let mut tape = Tape::<D>::new(&[], true);
    let v = f(&mut tape).unwrap();
    tape.value(v)
}

/// Jet of `sin(kπx)` scaled by `c` on a 1D point.
fn sine(c: f64, k: f64) -> FrozenField<1> {
    FrozenField::new(move |x: &[f64; 1]| {
        let (s, co) = (k * PI * x[0]).sin_cos();
        SpatialJet::from_parts(c * s, [c * k * PI * co], [[-c * k * k * PI * PI * s]])
    })
}

fn interior_batch<const D: usize>(domain: &ProblemDomain, n: usize, seed: u64) -> Vec<[f64; D]> {
    sample_uniform(domain, Region::Interior, n, &mut rng(seed)).unwrap()
}

fn mean_and_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (
        m,
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0),
    )
}

#[test]
fn samplers() {
    let square = ProblemDomain::dirichlet(BoxDomain::unit_cube(2));
    let pts: Vec<[f64; 2]> = interior_batch(&square, 1024, 1);
    assert!(pts.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
    for i in 0..2 {
        let m = pts.iter().map(|p| p[i]).sum::<f64>() / 1024.0;
        assert!((m - 0.5).abs() <= 0.02);
    }
    let contact = ProblemDomain::right_edge_contact(BoxDomain::unit_cube(2)).unwrap();
    let pts: Vec<[f64; 2]> = sample_uniform(&contact, Region::Piece(0), 4, &mut rng(2)).unwrap();
    assert!(pts
        .iter()
        .all(|p| p[0] == 1.0 && (0.0..=1.0).contains(&p[1])));
    let line = ProblemDomain::dirichlet(BoxDomain::interval(-1.0, 1.0));
    let pts: Vec<[f64; 1]> = sample_uniform(&line, Region::Piece(0), 2, &mut rng(3)).unwrap();
    assert_eq!(pts, vec![[-1.0], [1.0]]);
    let pts: Vec<[f64; 1]> = sample_uniform(&line, Region::Piece(0), 5, &mut rng(3)).unwrap();
    assert_eq!(pts[4], [-1.0]);
}

#[test]
fn lsm_vanishes_on_the_exact_solution() {
    let case = problem("ex5_4", 1).unwrap();
    let LossSpec::Lsm(spec) = &case.loss else {
        unreachable!()
    };
    let u = FrozenField::new(|x: &[f64; 1]| {
        let (s, c) = (2.0 * PI * x[0]).sin_cos();
        SpatialJet::from_parts(3.0 * s, [6.0 * PI * c], [[-12.0 * PI * PI * s]])
    });
    let batches: Batches<1> =
        draw_batches(&case.domain, &case.loss, &TrainConfig::standard(1, 1, 4), 0).unwrap();
    let l = value(|t| loss_lsm(t, &u, spec, &case.domain, &batches));
    assert!(l <= 1e-20, "{l:e}");
}

#[test]
fn lsm_of_zero_field_is_mean_squared_nonlinearity() {
    let domain = ProblemDomain::dirichlet(BoxDomain::unit_cube(1));
    let spec = LsmSemilinear {
        source: constant_field(0.0),
        nonlinearity: Nonlinearity::new(|x, u| (3.0 * x[0]).cos() + u, |_, _| 1.0),
        boundary: constant_field(0.0),
        gamma: 500.0,
    };
    let zero = FrozenField::new(|_: &[f64; 1]| SpatialJet::ZERO);
    let xs: Vec<[f64; 1]> = interior_batch(&domain, 300, 5);
    let batches = Batches {
        interior: vec![xs.clone()],
        boundary: vec![vec![[0.0], [1.0]]],
    };
    let l = value(|t| loss_lsm(t, &zero, &spec, &domain, &batches));
    let want = xs.iter().map(|x| (3.0 * x[0]).cos().powi(2)).sum::<f64>() / 300.0;
    assert!((l - want).abs() <= 1e-14, "{l} vs {want}");
}

#[test]
fn ritz_estimate_matches_quadrature_of_the_energy() {
    let case = problem("ex5_1", 1).unwrap();
    let LossSpec::Ritz(spec) = &case.loss else {
        unreachable!()
    };
    let zero = FrozenField::new(|_: &[f64; 1]| SpatialJet::ZERO);
    let mut tc = TrainConfig::standard(1, 1, 6);
    tc.batch_interior = 100_000;
    let batches: Batches<1> = draw_batches(&case.domain, &case.loss, &tc, 0).unwrap();
    assert_eq!(
        value(|t| loss_ritz_linear(t, &zero, spec, &case.domain, &batches)),
        0.0
    );

    let u = sine(1.0, 1.0);
    let est = value(|t| loss_ritz_linear(t, &u, spec, &case.domain, &batches));
    let density = |x: f64| {
        let (s, c) = (PI * x).sin_cos();
        let f = PI * PI * (1.0 + x * x) * s - 2.0 * PI * x * c + x * x * s;
        0.5 * ((1.0 + x * x) * PI * PI * c * c + x * x * s * s) - f * s
    };
    // 10⁶-point midpoint rule on (−1, 1).
    let n = 1_000_000;
    let hq = 2.0 / n as f64;
    let exact: f64 = (0..n)
        .map(|i| density(-1.0 + (i as f64 + 0.5) * hq))
        .sum::<f64>()
        * hq;
    let samples: Vec<f64> = batches.interior[0]
        .iter()
        .map(|x| 2.0 * density(x[0]))
        .collect();
    let (_, var) = mean_and_var(&samples);
    let sigma = (var / samples.len() as f64).sqrt();
    assert!(
        (est - exact).abs() <= 5.0 * sigma,
        "{est} vs {exact} (σ {sigma:e})"
    );
}

#[test]
fn frictionless_energy_equals_ritz_energy() {
    let domain = ProblemDomain::right_edge_contact(BoxDomain::unit_cube(2)).unwrap();
    let f = field(|x| (x[0] * 3.0).sin() + x[1]);
    let fr = FrictionJ2 {
        f: f.clone(),
        g: constant_field(0.0),
        gamma: 0.0,
    };
    let ritz = RitzLinear {
        p: constant_field(1.0),
        q: constant_field(1.0),
        f,
        gamma: 0.0,
    };
    let mut cfg = NetworkConfig::standard(2, 8);
    cfg.width = 6;
    cfg.depth = 2;
    cfg.activation = Activation::Tanh;
    let net = Network::init(cfg).unwrap();
    let batches: Batches<2> = draw_batches(
        &domain,
        &LossSpec::Friction(fr.clone()),
        &TrainConfig::standard(2, 1, 3),
        0,
    )
    .unwrap();
    let params = net.params.as_slice();
    let mut t = Tape::<2>::new(params, false);
    let a = loss_friction_j2(&mut t, &net, &fr, &domain, &batches).unwrap();
    let mut t2 = Tape::<2>::new(params, false);
    let b = loss_ritz_linear(&mut t2, &net, &ritz, &domain, &batches).unwrap();
    let (a, b) = (t.value(a), t2.value(b));
    assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0), "{a} vs {b}");

    let zero = FrozenField::new(|_: &[f64; 2]| SpatialJet::ZERO);
    let fr500 = FrictionJ2 {
        gamma: 500.0,
        g: constant_field(1.0),
        ..fr
    };
    assert_eq!(
        value(|t| loss_friction_j2(t, &zero, &fr500, &domain, &batches)),
        0.0
    );
}

#[test]
fn boundary_factor_values_and_derivatives() {
    let unit = BoxDomain::unit_cube(1);
    assert_eq!(boundary_factor(&[0.0], &unit).value, 0.0);
    assert_eq!(boundary_factor(&[1.0], &unit).value, 0.0);
    let mid = boundary_factor(&[0.5], &unit);
    assert_eq!((mid.value, mid.grad[0]), (0.25, 0.0));
    assert_eq!(
        boundary_factor(&[0.5, 0.5], &BoxDomain::unit_cube(2)).value,
        1.0 / 16.0
    );

    let b = BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
    let f = |x: &[f64]| (x[0] + 1.0) * (1.0 - x[0]) * x[1] * (2.0 - x[1]);
    let x = [0.3, 0.7];
    let jet = boundary_factor(&x, &b);
    let h = 1e-5;
    for i in 0..2 {
        let mut p = x;
        p[i] += h;
        let up = f(&p);
        p[i] -= 2.0 * h;
        let fd = (up - f(&p)) / (2.0 * h);
        assert!((jet.grad[i] - fd).abs() <= 1e-9);
    }
    // f is a product of quadratics, so the second differences are exact up to round-off.
    let h = 1e-3;
    let d2 = |i: usize| {
        let (mut a, mut c) = (x, x);
        a[i] += h;
        c[i] -= h;
        (f(&a) - 2.0 * f(&x) + f(&c)) / (h * h)
    };
    assert!((jet.hess[0][0] - d2(0)).abs() <= 1e-6);
    assert!((jet.hess[1][1] - d2(1)).abs() <= 1e-6);
    let cross = (f(&[x[0] + h, x[1] + h]) - f(&[x[0] + h, x[1] - h]) - f(&[x[0] - h, x[1] + h])
        + f(&[x[0] - h, x[1] - h]))
        / (4.0 * h * h);
    assert!((jet.hess[0][1] - cross).abs() <= 1e-6);
}

#[test]
fn rayleigh_quotient_of_the_first_sine_mode() {
    let domain = ProblemDomain::dirichlet(BoxDomain::unit_cube(1));
    let spec = LinearEigenJ3 {
        p: constant_field(1.0),
        q: constant_field(0.0),
        gamma: 100.0,
        x0: vec![0.5],
        use_boundary_factor: false,
    };
    let n = 200_000;
    let batches = Batches {
        interior: vec![interior_batch(&domain, n, 7), interior_batch(&domain, n, 8)],
        boundary: vec![],
    };
    let l = value(|t| loss_eigen_j3(t, &sine(1.0, 1.0), &spec, &domain, &batches));
    let num: Vec<f64> = batches.interior[0]
        .iter()
        .map(|x| (PI * (PI * x[0]).cos()).powi(2))
        .collect();
    let den: Vec<f64> = batches.interior[1]
        .iter()
        .map(|x| (PI * x[0]).sin().powi(2))
        .collect();
    let ((mn, vn), (md, vd)) = (mean_and_var(&num), mean_and_var(&den));
    let sigma = ((vn / md / md + mn * mn * vd / md.powi(4)) / n as f64).sqrt();
    assert!((l - PI * PI).abs() <= 5.0 * sigma, "{l} (σ {sigma:e})");
}

#[test]
fn rayleigh_ratio_is_scale_invariant() {
    let case = problem("ex5_3", 1).unwrap();
    let LossSpec::Eigen(spec) = &case.loss else {
        unreachable!()
    };
    let batches: Batches<1> =
        draw_batches(&case.domain, &case.loss, &TrainConfig::standard(1, 1, 2), 0).unwrap();
    let mut cfg = NetworkConfig::standard(1, 2);
    cfg.width = 10;
    cfg.depth = 2;
    let net = Network::init(cfg).unwrap();
    let ratio = |net: &Network| {
        let mut t = Tape::<1>::new(net.params.as_slice(), false);
        let (_, r) = loss_eigen_j3_parts(&mut t, net, spec, &case.domain, &batches).unwrap();
        t.value(r)
    };
    let base = ratio(&net);
    for c in [2.0, -0.5, 8.0] {
        let mut scaled = net.clone();
        scaled
            .params
            .block_mut("a")
            .unwrap()
            .iter_mut()
            .for_each(|a| *a *= c);
        assert_eq!(ratio(&scaled), base);
    }
}

#[test]
fn gp_loss_without_interaction_is_the_linear_quotient() {
    let case = problem("ex5_6", 1).unwrap();
    let LossSpec::Gp(gp) = &case.loss else {
        unreachable!()
    };
    let spec = GpEigenJ5 {
        beta: 0.0,
        ..gp.clone()
    };
    let j3 = LinearEigenJ3 {
        p: constant_field(1.0),
        q: gp.potential.clone(),
        gamma: gp.gamma,
        x0: gp.x0.clone(),
        use_boundary_factor: true,
    };
    let mut cfg = NetworkConfig::standard(1, 6);
    cfg.width = 8;
    cfg.depth = 2;
    let net = Network::init(cfg).unwrap();
    let batches: Batches<1> =
        draw_batches(&case.domain, &case.loss, &TrainConfig::standard(1, 1, 5), 3).unwrap();
    let params = net.params.as_slice();
    let mut t = Tape::<1>::new(params, false);
    let a = loss_gp_j5(&mut t, &net, &spec, &case.domain, &batches).unwrap();
    let mut t2 = Tape::<1>::new(params, false);
    let b = loss_eigen_j3(&mut t2, &net, &j3, &case.domain, &batches).unwrap();
    assert_eq!(t.value(a), t2.value(b));
    assert_eq!(t.gradient(a).unwrap(), t2.gradient(b).unwrap());
}

#[test]
fn gp_loss_matches_direct_quadrature() {
    let domain = ProblemDomain::dirichlet(BoxDomain::unit_cube(1));
    let v = gaussian_wells(1);
    let spec = GpEigenJ5 {
        potential: v.clone(),
        beta: 10.0,
        gamma: 100.0,
        x0: vec![0.5],
    };
    // ψ = 1 + x, so φ = x(1 − x)(1 + x).
    let psi = FrozenField::new(|x: &[f64; 1]| SpatialJet::from_parts(1.0 + x[0], [1.0], [[0.0]]));
    let m = 300;
    let grid: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
    let eta: Vec<[f64; 1]> = grid
        .iter()
        .flat_map(|&x| std::iter::repeat([x]).take(m))
        .collect();
    let zeta: Vec<[f64; 1]> = (0..m).flat_map(|_| grid.iter().map(|&x| [x])).collect();
    let batches = Batches {
        interior: vec![eta.clone(), eta, zeta],
        boundary: vec![],
    };
    let got = value(|t| loss_gp_j5(t, &psi, &spec, &domain, &batches));

    let phi = |x: f64| x * (1.0 - x) * (1.0 + x);
    let dphi = |x: f64| 1.0 - 3.0 * x * x;
    let n = 1_000_000;
    let (mut e, mut m2, mut m4) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let x = (i as f64 + 0.5) / n as f64;
        let p = phi(x);
        e += dphi(x).powi(2) + v(&[x]) * p * p;
        m2 += p * p;
        m4 += p.powi(4);
    }
    let (e, m2, m4) = (e / n as f64, m2 / n as f64, m4 / n as f64);
    let want = e / m2 + 10.0 / 2.0 * m4 / (m2 * m2) + 100.0 * (phi(0.5) - 1.0).powi(2);
    assert!((got - want).abs() <= 1e-3 * want.abs(), "{got} vs {want}");
}

#[test]
fn network_eigenvalue_of_sine_mode() {
    let case = problem("ex5_3", 1).unwrap();
    let mesh = build_mesh(&BoxDomain::unit_cube(1), 1e-4).unwrap();
    let s = |c: f64| {
        move |x: &[f64; 1]| {
            let (si, co) = (PI * x[0]).sin_cos();
            SpatialJet::from_parts(c * si, [c * PI * co], [[-c * PI * PI * si]])
        }
    };
    let l1 = network_eigenvalue::<1>(&s(1.0), &case.loss, &mesh).unwrap();
    let l5 = network_eigenvalue::<1>(&s(5.0), &case.loss, &mesh).unwrap();
    assert!((l1 - PI * PI).abs() <= 1e-6, "{l1}");
    assert!((l1 - l5).abs() <= 1e-12 * l1);
}

#[test]
fn zero_epochs_keep_the_initial_parameters() {
    let case = problem("ex5_4", 1).unwrap();
    let cfg = NetworkConfig::standard(1, 3);
    let model = train(
        cfg.clone(),
        &case.loss,
        &case.domain,
        &TrainConfig::standard(1, 0, 3),
    )
    .unwrap();
    assert_eq!(model.network, Network::init(cfg).unwrap());
    assert!(model.loss_history.is_empty());
}

#[test]
fn training_is_deterministic_and_execution_independent() {
    let case = problem("ex5_2", 2).unwrap();
    let mut cfg = NetworkConfig::standard(2, 1);
    cfg.width = 8;
    cfg.depth = 2;
    let mut tc = TrainConfig::standard(2, 5, 1);
    tc.batch_interior = 64;
    tc.batch_boundary = 32;
    let a = train(cfg.clone(), &case.loss, &case.domain, &tc).unwrap();
    tc.execution = Execution::Sequential;
    let b = train(cfg, &case.loss, &case.domain, &tc).unwrap();
    assert_eq!(a.network, b.network);
    assert_eq!(a.loss_history, b.loss_history);
    assert!(a.loss_history.iter().all(|l| l.is_finite()));

    let b1: Batches<2> = draw_batches(&case.domain, &case.loss, &tc, 4).unwrap();
    let b2: Batches<2> = draw_batches(&case.domain, &case.loss, &tc, 4).unwrap();
    assert_eq!(b1, b2);
    let b3: Batches<2> = draw_batches(&case.domain, &case.loss, &tc, 5).unwrap();
    assert_ne!(b1, b3);
    let (l1, g1) = evaluate_loss(
        &a.network,
        &case.loss,
        &case.domain,
        &b1,
        Execution::Parallel,
    )
    .unwrap();
    let (l2, g2) = evaluate_loss(
        &a.network,
        &case.loss,
        &case.domain,
        &b1,
        Execution::Sequential,
    )
    .unwrap();
    assert_eq!((l1, g1), (l2, g2));
}

#[test]
fn adam_reduces_a_quadratic_tenfold() {
    let mut r = rng(12);
    let mut theta: Vec<f64> = (0..20).map(|_| r.gen_range(-1.0..1.0)).collect();
    let f = |t: &[f64]| t.iter().map(|x| x * x).sum::<f64>();
    let start = f(&theta);
    let mut adam = Adam::new(theta.len(), 1e-3, AdamConfig::default());
    for _ in 0..1000 {
        let g: Vec<f64> = theta.iter().map(|x| 2.0 * x).collect();
        adam.step(&mut theta, &g);
    }
    assert!(f(&theta) <= start / 10.0);
}
