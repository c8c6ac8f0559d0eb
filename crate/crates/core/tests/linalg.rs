//! Sparse storage and solvers against dense nalgebra factorizations.

use deepfem::fem::{assemble_stiffness, build_mesh, BoxDomain};
use deepfem::linalg::{
    conjugate_gradient, matvec, norm2, solve_bordered, solve_general, solve_spd, BandedLu,
    CsrMatrix, DEFAULT_CG_TOL,
};
use deepfem::par::Execution;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense(a: &CsrMatrix) -> DMatrix<f64> {
    let n = a.dim();
    DMatrix::from_fn(n, n, |i, j| a.get(i, j))
}

/// Random symmetric banded matrix; `shift` on the diagonal controls
/// definiteness.
fn random_banded(rng: &mut ChaCha8Rng, n: usize, band: usize, shift: f64) -> CsrMatrix {
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, shift + rng.gen_range(0.0..1.0)));
        for j in (i + 1)..(i + 1 + band).min(n) {
            let v = rng.gen_range(-1.0..1.0);
            t.push((i, j, v));
            t.push((j, i, v));
        }
    }
    CsrMatrix::from_triplets(n, &t).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&diff) / norm2(b).max(f64::MIN_POSITIVE)
}

fn dense_bordered(k: &CsrMatrix, m: &[f64], rhs: &[f64], s: f64) -> (Vec<f64>, f64) {
    let n = k.dim();
    let kd = dense(k);
    let big = DMatrix::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
        (true, true) => kd[(i, j)],
        (true, false) => -m[i],
        (false, true) => 2.0 * m[j],
        (false, false) => 0.0,
    });
    let mut b = DVector::from_column_slice(rhs).push(s);
    b = big.lu().solve(&b).expect("oracle system is nonsingular");
    (b.rows(0, n).iter().copied().collect(), b[n])
}

#[test]
fn csr_matvec_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let n = rng.gen_range(1..60);
        let t: Vec<(usize, usize, f64)> = (0..rng.gen_range(0..4 * n))
            .map(|_| {
                (
                    rng.gen_range(0..n),
                    rng.gen_range(0..n),
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect();
        let a = CsrMatrix::from_triplets(n, &t).unwrap();
        let x = random_vec(&mut rng, n);
        let want = dense(&a) * DVector::from_column_slice(&x);
        let got = matvec(&a, &x).unwrap();
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() <= 1e-14 * w.abs().max(1.0));
        }
        let dd = a.to_dense();
        assert!((0..n).all(|i| (0..n).all(|j| dd[i][j] == a.get(i, j))));
    }
}

#[test]
fn identity_solve() {
    let b = vec![3.0, -1.0, 0.5, 7.0];
    let id = CsrMatrix::identity(4);
    assert_eq!(solve_spd(&id, &b, DEFAULT_CG_TOL).unwrap(), b);
    assert_eq!(conjugate_gradient(&id, &b, DEFAULT_CG_TOL).unwrap(), b);
    assert_eq!(
        solve_spd(&id, &[0.0; 4], DEFAULT_CG_TOL).unwrap(),
        vec![0.0; 4]
    );
}

#[test]
fn banded_lu_matches_dense_lu() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for shift in [3.0, 0.0, -1.5] {
        for _ in 0..10 {
            let n = rng.gen_range(2..150);
            let band = rng.gen_range(1..5);
            let a = random_banded(&mut rng, n, band, shift);
            let b = random_vec(&mut rng, n);
            let Some(want) = dense(&a).lu().solve(&DVector::from_column_slice(&b)) else {
                continue;
            };
            let lu = BandedLu::factor(&a).unwrap();
            let got = lu.solve(&b).unwrap();
            let cond_guard = want.norm().max(1.0);
            let diff: f64 = got
                .iter()
                .zip(want.iter())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(diff / cond_guard <= 1e-8, "n={n} shift={shift}: {diff:e}");
            let refined = solve_general(&a, &b).unwrap();
            let r = matvec(&a, &refined).unwrap();
            assert!(rel_err(&r, &b) <= 1e-10);
        }
    }
}

#[test]
fn spd_residual_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.gen_range(5..300);
        let band = rng.gen_range(1..12);
        let a = random_banded(&mut rng, n, band, 25.0);
        let b = random_vec(&mut rng, n);
        for x in [
            solve_spd(&a, &b, DEFAULT_CG_TOL).unwrap(),
            conjugate_gradient(&a, &b, DEFAULT_CG_TOL).unwrap(),
        ] {
            let r: Vec<f64> = matvec(&a, &x)
                .unwrap()
                .iter()
                .zip(&b)
                .map(|(p, q)| p - q)
                .collect();
            assert!(
                norm2(&r) <= DEFAULT_CG_TOL * norm2(&b) * 10.0,
                "{:e}",
                norm2(&r) / norm2(&b)
            );
        }
    }
}

#[test]
fn cg_on_two_dimensional_laplacian_matches_dense_cholesky() {
    let mesh = build_mesh(&BoxDomain::unit_cube(2), 1.0 / 8.0).unwrap();
    let a = assemble_stiffness(&mesh, |_| 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = random_vec(&mut rng, a.dim());
    let want: Vec<f64> = dense(&a)
        .cholesky()
        .unwrap()
        .solve(&DVector::from_column_slice(&b))
        .iter()
        .copied()
        .collect();
    let got = conjugate_gradient(&a, &b, DEFAULT_CG_TOL).unwrap();
    assert!(rel_err(&got, &want) <= 1e-10);
}

#[test]
fn cg_rejects_indefinite_matrices() {
    let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 1, -1.0)]).unwrap();
    assert!(conjugate_gradient(&a, &[0.0, 1.0], DEFAULT_CG_TOL).is_err());
}

#[test]
fn bordered_examples() {
    let id = CsrMatrix::identity(3);
    let e1 = [1.0, 0.0, 0.0];
    let (v, mu) = solve_bordered(&id, &e1, &[0.0; 3], 2.0).unwrap();
    assert!(rel_err(&v, &e1) <= 1e-15 && (mu - 1.0).abs() <= 1e-15);
    let (v, mu) = solve_bordered(&id, &e1, &[0.0; 3], 0.0).unwrap();
    assert!(v.iter().all(|&x| x == 0.0) && mu == 0.0);
    assert!(solve_bordered(&id, &[0.0; 3], &[1.0; 3], 0.0).is_err());
}

#[test]
fn bordered_solve_matches_dense_bordered_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut done = 0;
    while done < 50 {
        let n = rng.gen_range(2..=200);
        // Alternate definite and indefinite K, as in the eigen Newton step.
        let shift = if done % 2 == 0 {
            10.0
        } else {
            rng.gen_range(-2.0..1.0)
        };
        let band = rng.gen_range(1..4);
        let k = random_banded(&mut rng, n, band, shift);
        let m = random_vec(&mut rng, n);
        let rhs = random_vec(&mut rng, n);
        let s = rng.gen_range(-1.0..1.0);
        if dense(&k).lu().determinant().abs() < 1e-8 {
            continue;
        }
        let (wv, wmu) = dense_bordered(&k, &m, &rhs, s);
        let (v, mu) = solve_bordered(&k, &m, &rhs, s).unwrap();
        let mut got = v.clone();
        got.push(mu);
        let mut want = wv.clone();
        want.push(wmu);
        assert!(
            rel_err(&got, &want) <= 1e-9,
            "instance {done}, n={n}: {:e}",
            rel_err(&got, &want)
        );
        done += 1;
    }
}

#[test]
fn parallel_matvec_is_bitwise_sequential() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_banded(&mut rng, 500, 6, 1.0);
    let x = random_vec(&mut rng, 500);
    let seq = deepfem::linalg::matvec_with(&a, &x, Execution::Sequential).unwrap();
    let par = deepfem::linalg::matvec_with(&a, &x, Execution::Parallel).unwrap();
    assert_eq!(seq, par);
}
