//! Randomised invariants.

use deepfem::autodiff::{jet_activation, jet_affine, Activation, SpatialJet};
use deepfem::bench::{check_recursion_bound, problem};
use deepfem::fem::{build_mesh, interpolate_at_nodes, prolongate, BoxDomain};
use deepfem::linalg::{matvec, matvec_with, CsrMatrix};
use deepfem::network::{Architecture, Network, NetworkConfig};
use deepfem::par::Execution;
use deepfem::variational::{boundary_factor, draw_batches, evaluate_loss, Batches, TrainConfig};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    -3.0..3.0f64
}

fn jet2() -> impl Strategy<Value = SpatialJet<2>> {
    (finite(), [finite(), finite()], finite(), finite(), finite())
        .prop_map(|(v, g, a, b, c)| SpatialJet::from_parts(v, g, [[a, b], [b, c]]))
}

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![
        Just(Activation::Relu),
        Just(Activation::Tanh),
        Just(Activation::ReluCubed)
    ]
}

fn symmetric(j: &SpatialJet<2>) -> bool {
    j.hess[0][1] == j.hess[1][0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csr_matvec_equals_dense(
        n in 1usize..30,
        entries in prop::collection::vec((0usize..30, 0usize..30, -5.0..5.0f64), 0..120),
        x in prop::collection::vec(-5.0..5.0f64, 30),
    ) {
        let t: Vec<_> = entries.into_iter().map(|(i, j, v)| (i % n, j % n, v)).collect();
        let a = CsrMatrix::from_triplets(n, &t).unwrap();
        let x = &x[..n];
        let got = matvec(&a, x).unwrap();
        let dense = a.to_dense();
        for i in 0..n {
            let want: f64 = (0..n).map(|j| dense[i][j] * x[j]).sum();
            let scale: f64 = (0..n).map(|j| (dense[i][j] * x[j]).abs()).sum::<f64>().max(1.0);
            prop_assert!((got[i] - want).abs() <= 1e-14 * scale);
        }
        prop_assert_eq!(matvec_with(&a, x, Execution::Sequential).unwrap(), matvec_with(&a, x, Execution::Parallel).unwrap());
    }

    #[test]
    fn jet_hessians_stay_symmetric(a in jet2(), b in jet2(), c in -2.0..2.0f64, act in activation()) {
        prop_assert!(symmetric(&a.mul(&b)));
        prop_assert!(symmetric(&a.add(&b.scale(c))));
        prop_assert!(symmetric(&jet_activation(act, &a)));
        let out = jet_affine(&[0.3, -1.1, 2.0, 0.7], 2, 2, Some(&[0.1, -0.2]), &[a, b]).unwrap();
        prop_assert!(out.iter().all(symmetric));
    }

    #[test]
    fn jet_product_rule(a in jet2(), b in jet2()) {
        let p = a.mul(&b);
        prop_assert_eq!(p.value, a.value * b.value);
        for i in 0..2 {
            let g = a.grad[i] * b.value + a.value * b.grad[i];
            prop_assert!((p.grad[i] - g).abs() <= 1e-12 * (1.0 + g.abs()));
        }
    }

    #[test]
    fn recursion_bound_holds(a0 in 0.0..0.4999f64, b in 1e-9..0.2499f64, k in 1usize..80) {
        prop_assert!(check_recursion_bound(a0, b, k).unwrap());
    }

    #[test]
    fn boundary_factor_vanishes_on_the_boundary(t in 0.0..1.0f64, side in 0usize..4, lo in -2.0..0.0f64, len in 0.5..3.0f64) {
        let dom = BoxDomain::new(vec![lo, lo], vec![lo + len, lo + len]).unwrap();
        let s = lo + t * len;
        let x = match side {
            0 => [lo, s],
            1 => [lo + len, s],
            2 => [s, lo],
            _ => [s, lo + len],
        };
        prop_assert_eq!(boundary_factor(&x, &dom).value, 0.0);
        let inside = [lo + 0.5 * len, s.clamp(lo + 1e-3, lo + len - 1e-3)];
        prop_assert!(boundary_factor(&inside, &dom).value > 0.0);
    }

    #[test]
    fn prolongation_reproduces_linear_fields(k in 1u32..4, r in 1u32..3, c in [-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64]) {
        let hc = 0.5f64.powi(k as i32 + 1);
        let hf = hc * 0.5f64.powi(r as i32);
        let dom = BoxDomain::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let (coarse, fine) = (build_mesh(&dom, hc).unwrap(), build_mesh(&dom, hf).unwrap());
        // Boundary vertices carry zero, so the interpolant is linear only on
        // elements away from the boundary; everywhere it must match the
        // coarse function itself.
        let lin = move |x: &[f64]| c[0] + c[1] * x[0] + c[2] * x[1];
        let uc = interpolate_at_nodes(&coarse, lin);
        let uf = prolongate(&coarse, &uc, &fine).unwrap();
        for i in 0..fine.num_interior() {
            let x = fine.vertex(fine.vertex_of_dof(i));
            prop_assert!((uf[i] - coarse.evaluate(&uc, x).unwrap()).abs() <= 1e-13);
        }
        // Vertices of elements away from the boundary carry the linear field.
        for i in 0..fine.num_interior() {
            let x = fine.vertex(fine.vertex_of_dof(i));
            if x.iter().all(|v| v.abs() <= 1.0 - hc - 1e-12) {
                prop_assert!((uf[i] - lin(x)).abs() <= 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn parallel_loss_gradient_is_bitwise_sequential(seed in 0u64..1000, epoch in 0u64..50) {
        let case = problem("ex5_4", 2).unwrap();
        let cfg = NetworkConfig { arch: Architecture::Resnet, width: 8, depth: 2, activation: Activation::ReluCubed, input_dim: 2, seed };
        let net = Network::init(cfg).unwrap();
        let mut tc = TrainConfig::standard(2, 1, seed);
        tc.batch_interior = 64;
        tc.batch_boundary = 16;
        let b: Batches<2> = draw_batches(&case.domain, &case.loss, &tc, epoch).unwrap();
        let seq = evaluate_loss(&net, &case.loss, &case.domain, &b, Execution::Sequential).unwrap();
        let par = evaluate_loss(&net, &case.loss, &case.domain, &b, Execution::Parallel).unwrap();
        prop_assert_eq!(seq.0.to_bits(), par.0.to_bits());
        prop_assert_eq!(seq.1, par.1);
        prop_assert_eq!(b, draw_batches(&case.domain, &case.loss, &tc, epoch).unwrap());
    }
}
