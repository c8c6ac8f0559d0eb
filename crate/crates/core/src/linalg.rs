//! Compressed sparse row matrices, banded LU, Jacobi-preconditioned CG and
//! the bordered solve used by the nonlinear eigenvalue Newton step.

use crate::error::{check_dim, Error, Result};
use crate::par::Execution;

pub const DEFAULT_CG_TOL: f64 = 1e-12;

/// Matrices whose half-bandwidth is at most this are solved directly by
/// [`solve_spd`]; wider ones go through CG.
const DIRECT_BANDWIDTH: usize = 4;

const BORDERED_RESIDUAL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Validates offsets and per-row sorted, in-range column indices.
    pub fn from_parts(
        n: usize,
        offsets: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_dim(n + 1, offsets.len())?;
        check_dim(indices.len(), values.len())?;
        if offsets[0] != 0 || offsets[n] != indices.len() || offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Config(
                "CSR offsets must be nondecreasing from 0 to nnz".into(),
            ));
        }
        for i in 0..n {
            let cols = &indices[offsets[i]..offsets[i + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.last().is_some_and(|&c| c >= n) {
                return Err(Error::Config(format!(
                    "CSR row {i} has unsorted or out-of-range columns"
                )));
            }
        }
        Ok(Self {
            n,
            offsets,
            indices,
            values,
        })
    }

    /// Sums duplicate entries. Explicit zeros are kept so that the pattern
    /// depends only on the triplet positions.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.to_vec();
        if let Some(&(i, j, _)) = t.iter().find(|(i, j, _)| *i >= n || *j >= n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: i.max(j) + 1,
            });
        }
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut offsets = vec![0; n + 1];
        let mut indices = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in t {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                values.push(v);
                offsets[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self {
            n,
            offsets,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.offsets[i]..self.offsets[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `(lower, upper)` half-bandwidths of the stored pattern.
    pub fn bandwidth(&self) -> (usize, usize) {
        let (mut kl, mut ku) = (0, 0);
        for i in 0..self.n {
            let (cols, _) = self.row(i);
            if let (Some(&lo), Some(&hi)) = (cols.first(), cols.last()) {
                kl = kl.max(i.saturating_sub(lo));
                ku = ku.max(hi.saturating_sub(i));
            }
        }
        (kl, ku)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        d
    }

    /// `self + c · other`, on the union of both patterns.
    pub fn add_scaled(&self, other: &CsrMatrix, c: f64) -> Result<CsrMatrix> {
        check_dim(self.n, other.n)?;
        let mut offsets = vec![0; self.n + 1];
        let mut indices = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(indices.capacity());
        for i in 0..self.n {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let ja = ca.get(p).copied().unwrap_or(usize::MAX);
                let jb = cb.get(q).copied().unwrap_or(usize::MAX);
                if ja == jb {
                    indices.push(ja);
                    values.push(va[p] + c * vb[q]);
                    p += 1;
                    q += 1;
                } else if ja < jb {
                    indices.push(ja);
                    values.push(va[p]);
                    p += 1;
                } else {
                    indices.push(jb);
                    values.push(c * vb[q]);
                    q += 1;
                }
            }
            offsets[i + 1] = indices.len();
        }
        Ok(CsrMatrix {
            n: self.n,
            offsets,
            indices,
            values,
        })
    }

    pub fn scaled(&self, c: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `max |a_ij − a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> Result<f64> {
        let ax = matvec(self, x)?;
        Ok(dot(x, &ax))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `A x`.
pub fn matvec(a: &CsrMatrix, x: &[f64]) -> Result<Vec<f64>> {
    matvec_with(a, x, Execution::Sequential)
}

/// `A x` with rows distributed according to `exec`.
pub fn matvec_with(a: &CsrMatrix, x: &[f64], exec: Execution) -> Result<Vec<f64>> {
    check_dim(a.n, x.len())?;
    let row = |i: usize| {
        let (cols, vals) = a.row(i);
        cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum::<f64>()
    };
    Ok(if exec.is_parallel() && a.n >= 4096 {
        exec.map_range(a.n, row)
    } else {
        (0..a.n).map(row).collect()
    })
}

/// LU factorisation with partial pivoting of a banded matrix, stored
/// column-major in LAPACK band layout with `kl` extra rows for fill-in.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let (kl, ku) = a.bandwidth();
        let ldab = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            ab: vec![0.0; ldab * n],
            pivots: vec![0; n],
        };
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                *lu.at_mut(i, j) = v;
            }
        }
        lu.eliminate()?;
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let ldab = 2 * self.kl + self.ku + 1;
        (self.kl + self.ku + i - j) + j * ldab
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.ab[self.idx(i, j)]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let k = self.idx(i, j);
        &mut self.ab[k]
    }

    fn eliminate(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut ju = 0;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = self.at(j, j).abs();
            for r in 1..=km {
                let v = self.at(j + r, j).abs();
                if v > best {
                    best = v;
                    jp = r;
                }
            }
            self.pivots[j] = j + jp;
            if best == 0.0 || !best.is_finite() {
                return Err(Error::SolverFailure(format!(
                    "banded LU: zero or non-finite pivot in column {j}"
                )));
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let (a, b) = (self.idx(j, c), self.idx(j + jp, c));
                    self.ab.swap(a, b);
                }
            }
            if km > 0 {
                let inv = 1.0 / self.at(j, j);
                for r in 1..=km {
                    *self.at_mut(j + r, j) *= inv;
                }
                let lcol = self.idx(j + 1, j);
                for c in j + 1..=ju {
                    let t = self.at(j, c);
                    if t != 0.0 {
                        let base = self.idx(j + 1, c);
                        for r in 0..km {
                            self.ab[base + r] -= self.ab[lcol + r] * t;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n, rhs.len())?;
        let n = self.n;
        let mut b = rhs.to_vec();
        for j in 0..n {
            let l = self.pivots[j];
            if l != j {
                b.swap(l, j);
            }
            let lm = self.kl.min(n - 1 - j);
            let bj = b[j];
            if bj != 0.0 {
                for r in 1..=lm {
                    b[j + r] -= self.at(j + r, j) * bj;
                }
            }
        }
        let kv = self.kl + self.ku;
        for j in (0..n).rev() {
            b[j] /= self.at(j, j);
            let bj = b[j];
            if bj != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    b[i] -= self.at(i, j) * bj;
                }
            }
        }
        Ok(b)
    }
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
/// Stops when `‖A x − rhs‖₂ ≤ tol · ‖rhs‖₂`; fails after `10 n` iterations.
pub fn conjugate_gradient(a: &CsrMatrix, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = a.dim();
    check_dim(n, rhs.len())?;
    let bnorm = norm2(rhs);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let anorm = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    let exec = Execution::default();
    for _ in 0..10 * n.max(1) {
        let ap = matvec_with(a, &p, exec)?;
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::SolverFailure(
                "CG: matrix is not positive definite".into(),
            ));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let mut restarted = false;
        if norm2(&r) <= tol * bnorm {
            let true_res = residual_norm(a, &x, rhs)?;
            // Below the backward-error floor no further progress is possible.
            let floor = 16.0 * f64::EPSILON * anorm * norm2(&x);
            if true_res <= (tol * bnorm).max(floor) {
                return Ok(x);
            }
            // Recurrence drifted; restart from the true residual.
            r = sub(rhs, &matvec(a, &x)?);
            restarted = true;
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = if restarted { 0.0 } else { rz_new / rz };
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure(format!(
        "CG did not converge within {} iterations",
        10 * n
    )))
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn residual_norm(a: &CsrMatrix, x: &[f64], rhs: &[f64]) -> Result<f64> {
    Ok(norm2(&sub(rhs, &matvec(a, x)?)))
}

/// Reusable solver for one symmetric positive definite matrix: banded LU for
/// narrow (1D) bands, CG otherwise.
#[derive(Clone, Debug)]
pub struct SpdSolver {
    matrix: CsrMatrix,
    tol: f64,
    direct: Option<BandedLu>,
}

impl SpdSolver {
    pub fn new(a: &CsrMatrix, tol: f64) -> Result<Self> {
        let (kl, ku) = a.bandwidth();
        let direct = if kl.max(ku) <= DIRECT_BANDWIDTH {
            Some(BandedLu::factor(a)?)
        } else {
            None
        };
        Ok(Self {
            matrix: a.clone(),
            tol,
            direct,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match &self.direct {
            Some(lu) => {
                let mut x = lu.solve(rhs)?;
                // One step of refinement.
                let r = sub(rhs, &matvec(&self.matrix, &x)?);
                let dx = lu.solve(&r)?;
                x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::SolverFailure(
                        "direct solve produced non-finite values".into(),
                    ));
                }
                Ok(x)
            }
            None => conjugate_gradient(&self.matrix, rhs, self.tol),
        }
    }
}

/// Solves `A x = rhs` for symmetric positive definite `A`.
pub fn solve_spd(a: &CsrMatrix, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
    SpdSolver::new(a, tol)?.solve(rhs)
}

/// Solves `A x = rhs` for a general (possibly indefinite) banded matrix.
pub fn solve_general(a: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let lu = BandedLu::factor(a)?;
    let mut x = lu.solve(rhs)?;
    let r = sub(rhs, &matvec(a, &x)?);
    let dx = lu.solve(&r)?;
    x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
    Ok(x)
}

/// Solves
///
/// ```text
/// [ K    −m ] [v]   [rhs]
/// [ 2mᵀ   0 ] [μ] = [ s ]
/// ```
///
/// by block elimination on a banded LU of `K`, followed by iterative
/// refinement on the full bordered residual.
pub fn solve_bordered(k: &CsrMatrix, m: &[f64], rhs: &[f64], s: f64) -> Result<(Vec<f64>, f64)> {
    let n = k.dim();
    check_dim(n, m.len())?;
    check_dim(n, rhs.len())?;
    let mnorm = norm2(m);
    if mnorm == 0.0 {
        return Err(Error::Domain("bordering vector m is zero".into()));
    }
    let lu = BandedLu::factor(k)?;
    let w2 = lu.solve(m)?;
    let mw2 = dot(m, &w2);
    if mw2.abs() <= 1e-14 * mnorm * norm2(&w2) || !mw2.is_finite() {
        return Err(Error::SingularBordering(mw2));
    }
    let block = |r: &[f64], t: f64| -> Result<(Vec<f64>, f64)> {
        let w1 = lu.solve(r)?;
        let mu = (t - 2.0 * dot(m, &w1)) / (2.0 * mw2);
        let v = w1.iter().zip(&w2).map(|(a, b)| a + mu * b).collect();
        Ok((v, mu))
    };
    let residual = |v: &[f64], mu: f64| -> Result<(Vec<f64>, f64)> {
        let kv = matvec(k, v)?;
        let r1 = (0..n).map(|i| rhs[i] - (kv[i] - mu * m[i])).collect();
        Ok((r1, s - 2.0 * dot(m, v)))
    };
    let scale = (dot(rhs, rhs) + s * s).sqrt().max(f64::MIN_POSITIVE);
    let (mut v, mut mu) = block(rhs, s)?;
    let mut res = f64::INFINITY;
    for _ in 0..4 {
        let (r1, r2) = residual(&v, mu)?;
        res = (dot(&r1, &r1) + r2 * r2).sqrt();
        if res <= BORDERED_RESIDUAL * scale * 1e-3 || scale == f64::MIN_POSITIVE && res == 0.0 {
            break;
        }
        let (dv, dmu) = block(&r1, r2)?;
        v.iter_mut().zip(&dv).for_each(|(a, b)| *a += b);
        mu += dmu;
        let (r1, r2) = residual(&v, mu)?;
        let new_res = (dot(&r1, &r1) + r2 * r2).sqrt();
        if new_res >= res {
            res = new_res;
            break;
        }
        res = new_res;
    }
    let rel = if scale > f64::MIN_POSITIVE {
        res / scale
    } else {
        res
    };
    if rel > BORDERED_RESIDUAL || !rel.is_finite() {
        return Err(Error::SolverFailure(format!(
            "bordered solve residual {rel:e} exceeds tolerance"
        )));
    }
    Ok((v, mu))
}
