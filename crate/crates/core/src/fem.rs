//! Uniform meshes and continuous piecewise-linear (P1) elements on
//! intervals and rectangles, with homogeneous Dirichlet conditions imposed
//! by eliminating boundary vertices.
//!
//! Vectors of nodal coefficients ([`FemVector`]) are indexed by interior
//! degree of freedom; boundary values are implicitly zero.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, matvec, CsrMatrix};
use crate::par::Execution;

/// Nodal coefficients on the interior vertices of a mesh.
pub type FemVector = Vec<f64>;

/// Axis-aligned box `Π (lower_i, upper_i)` in one or two dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if !(1..=2).contains(&lower.len()) {
            return Err(Error::Config(format!(
                "only 1D and 2D boxes are supported, got dimension {}",
                lower.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(Error::Config(
                "box must have lower < upper in every direction".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn interval(a: f64, b: f64) -> Self {
        Self::new(vec![a], vec![b]).expect("a < b")
    }

    pub fn unit_cube(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim]).expect("dimension 1 or 2")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(a, b)| b - a)
            .product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (a, b))| *a <= *x && *x <= *b)
    }
}

/// One quadrature point of an element: position, barycentric coordinates
/// of the element's vertices, and weight (including the element measure).
#[derive(Clone, Copy, Debug)]
pub struct QuadPoint {
    pub x: [f64; 2],
    pub bary: [f64; 3],
    pub weight: f64,
}

const GAUSS2: f64 = 0.288_675_134_594_812_9; // 1/(2√3)

#[derive(Clone, Debug)]
pub struct Mesh {
    domain: BoxDomain,
    h: f64,
    /// Cells per direction.
    cells: [usize; 2],
    vertices: Vec<[f64; 2]>,
    /// `dim + 1` vertex indices per element, flattened.
    elements: Vec<usize>,
    dof_of_vertex: Vec<Option<usize>>,
    vertex_of_dof: Vec<usize>,
}

/// Uniform mesh of `domain` with spacing `h`; in 2D every grid square is
/// split along its `(0,0)–(1,1)` diagonal.
pub fn build_mesh(domain: &BoxDomain, h: f64) -> Result<Mesh> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!(
            "mesh size must be positive, got {h}"
        )));
    }
    let d = domain.dim();
    let mut cells = [1usize; 2];
    for i in 0..d {
        let len = domain.upper[i] - domain.lower[i];
        let n = (len / h).round();
        if n < 1.0 || ((n * h - len) / len).abs() > 1e-10 {
            return Err(Error::Config(format!(
                "mesh size {h} does not divide the side length {len}"
            )));
        }
        cells[i] = n as usize;
    }
    let (a, b) = (&domain.lower, &domain.upper);
    let coord = |i: usize, k: usize| {
        if k == cells[i] {
            b[i]
        } else {
            a[i] + (b[i] - a[i]) * k as f64 / cells[i] as f64
        }
    };
    let mut vertices = Vec::new();
    let mut elements = Vec::new();
    let mut dof_of_vertex = Vec::new();
    let mut vertex_of_dof = Vec::new();
    if d == 1 {
        let n = cells[0];
        for k in 0..=n {
            vertices.push([coord(0, k), 0.0]);
            if k == 0 || k == n {
                dof_of_vertex.push(None);
            } else {
                dof_of_vertex.push(Some(vertex_of_dof.len()));
                vertex_of_dof.push(k);
            }
        }
        for k in 0..n {
            elements.extend_from_slice(&[k, k + 1]);
        }
    } else {
        let (nx, ny) = (cells[0], cells[1]);
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([coord(0, i), coord(1, j)]);
                if i == 0 || j == 0 || i == nx || j == ny {
                    dof_of_vertex.push(None);
                } else {
                    dof_of_vertex.push(Some(vertex_of_dof.len()));
                    vertex_of_dof.push(vid(i, j));
                }
            }
        }
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10, v01, v11) =
                    (vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1));
                elements.extend_from_slice(&[v00, v10, v11]);
                elements.extend_from_slice(&[v00, v11, v01]);
            }
        }
    }
    Ok(Mesh {
        domain: domain.clone(),
        h,
        cells,
        vertices,
        elements,
        dof_of_vertex,
        vertex_of_dof,
    })
}

impl Mesh {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len() / (self.dim() + 1)
    }

    pub fn num_interior(&self) -> usize {
        self.vertex_of_dof.len()
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.vertices[v][..self.dim()]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let k = self.dim() + 1;
        &self.elements[e * k..(e + 1) * k]
    }

    pub fn dof_of_vertex(&self, v: usize) -> Option<usize> {
        self.dof_of_vertex[v]
    }

    pub fn vertex_of_dof(&self, i: usize) -> usize {
        self.vertex_of_dof[i]
    }

    /// Signed measure of element `e` (positive for every element).
    pub fn element_measure(&self, e: usize) -> f64 {
        let v = self.element(e);
        let p = |k: usize| self.vertices[v[k]];
        if self.dim() == 1 {
            p(1)[0] - p(0)[0]
        } else {
            let (a, b, c) = (p(0), p(1), p(2));
            0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        }
    }

    /// Gradients of the barycentric coordinates of element `e`.
    fn bary_gradients(&self, e: usize) -> [[f64; 2]; 3] {
        let v = self.element(e);
        let p = |k: usize| self.vertices[v[k]];
        if self.dim() == 1 {
            let len = p(1)[0] - p(0)[0];
            [[-1.0 / len, 0.0], [1.0 / len, 0.0], [0.0; 2]]
        } else {
            let (a, b, c) = (p(0), p(1), p(2));
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            [
                [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
                [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
                [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
            ]
        }
    }

    /// Quadrature rule on element `e`: two-point Gauss in 1D, edge
    /// midpoints in 2D. Both are exact for quadratics.
    pub fn quadrature(&self, e: usize) -> Vec<QuadPoint> {
        let v = self.element(e);
        let meas = self.element_measure(e);
        let point = |bary: [f64; 3], weight: f64| {
            let mut x = [0.0; 2];
            for (k, &vk) in v.iter().enumerate() {
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi += bary[k] * self.vertices[vk][i];
                }
            }
            QuadPoint { x, bary, weight }
        };
        if self.dim() == 1 {
            let (l, r) = (0.5 - GAUSS2, 0.5 + GAUSS2);
            vec![
                point([r, l, 0.0], 0.5 * meas),
                point([l, r, 0.0], 0.5 * meas),
            ]
        } else {
            let w = meas / 3.0;
            vec![
                point([0.5, 0.5, 0.0], w),
                point([0.0, 0.5, 0.5], w),
                point([0.5, 0.0, 0.5], w),
            ]
        }
    }

    /// Value at vertex `v` of the field with interior coefficients `u`.
    fn nodal(&self, u: &[f64], v: usize) -> f64 {
        self.dof_of_vertex[v].map_or(0.0, |i| u[i])
    }

    /// Element containing `x` (closest element for points on shared edges).
    fn locate(&self, x: &[f64]) -> Result<usize> {
        if !self.domain.contains(x) {
            return Err(Error::Domain(format!("point {x:?} lies outside the mesh")));
        }
        let cell = |i: usize| {
            let t = (x[i] - self.domain.lower[i]) / (self.domain.upper[i] - self.domain.lower[i]);
            ((t * self.cells[i] as f64).floor() as usize).min(self.cells[i] - 1)
        };
        if self.dim() == 1 {
            return Ok(cell(0));
        }
        let (i, j) = (cell(0), cell(1));
        let base = 2 * (j * self.cells[0] + i);
        let v00 = self.vertices[self.element(base)[0]];
        let (dx, dy) = (x[0] - v00[0], x[1] - v00[1]);
        Ok(if dx >= dy { base } else { base + 1 })
    }

    /// Evaluates the P1 function with interior coefficients `u` at `x`.
    pub fn evaluate(&self, u: &[f64], x: &[f64]) -> Result<f64> {
        check_dim(self.num_interior(), u.len())?;
        check_dim(self.dim(), x.len())?;
        let e = self.locate(x)?;
        let v = self.element(e);
        let g = self.bary_gradients(e);
        let p0 = self.vertices[v[0]];
        let mut out = 0.0;
        // λ_k(x) = λ_k(p0) + ∇λ_k · (x − p0)
        for (k, &vk) in v.iter().enumerate() {
            let mut lam = if k == 0 { 1.0 } else { 0.0 };
            for i in 0..self.dim() {
                lam += g[k][i] * (x[i] - p0[i]);
            }
            out += lam * self.nodal(u, vk);
        }
        Ok(out)
    }
}

/// Assembles interior-dof matrix entries from per-element local matrices.
fn assemble_matrix<F>(mesh: &Mesh, local: F) -> CsrMatrix
where
    F: Fn(usize) -> [[f64; 3]; 3] + Sync + Send,
{
    let k = mesh.dim() + 1;
    let locals = Execution::default().map_range(mesh.num_elements(), local);
    let mut triplets = Vec::with_capacity(mesh.num_elements() * k * k);
    for (e, m) in locals.iter().enumerate() {
        let v = mesh.element(e);
        for a in 0..k {
            let Some(i) = mesh.dof_of_vertex(v[a]) else {
                continue;
            };
            for b in 0..k {
                if let Some(j) = mesh.dof_of_vertex(v[b]) {
                    triplets.push((i, j, m[a][b]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(mesh.num_interior(), &triplets).expect("dof indices are in range")
}

fn assemble_vector<F>(mesh: &Mesh, local: F) -> FemVector
where
    F: Fn(usize) -> [f64; 3] + Sync + Send,
{
    let k = mesh.dim() + 1;
    let locals = Execution::default().map_range(mesh.num_elements(), local);
    let mut out = vec![0.0; mesh.num_interior()];
    for (e, l) in locals.iter().enumerate() {
        for (a, &v) in mesh.element(e).iter().enumerate().take(k) {
            if let Some(i) = mesh.dof_of_vertex(v) {
                out[i] += l[a];
            }
        }
    }
    out
}

/// P1 interpolant of the interior coefficients `u` at a quadrature point.
fn value_at(mesh: &Mesh, u: &[f64], e: usize, q: &QuadPoint) -> f64 {
    mesh.element(e)
        .iter()
        .enumerate()
        .map(|(k, &v)| q.bary[k] * mesh.nodal(u, v))
        .sum()
}

/// `∫ p ∇φ_j · ∇φ_i`.
pub fn assemble_stiffness<P>(mesh: &Mesh, p: P) -> CsrMatrix
where
    P: Fn(&[f64]) -> f64 + Sync + Send,
{
    let d = mesh.dim();
    let k = d + 1;
    assemble_matrix(mesh, |e| {
        let g = mesh.bary_gradients(e);
        let pw: f64 = mesh
            .quadrature(e)
            .iter()
            .map(|q| q.weight * p(&q.x[..d]))
            .sum();
        let mut m = [[0.0; 3]; 3];
        for a in 0..k {
            for b in 0..k {
                m[a][b] = pw * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
            }
        }
        m
    })
}

fn weighted_mass_local(mesh: &Mesh, e: usize, w: impl Fn(&QuadPoint) -> f64) -> [[f64; 3]; 3] {
    let k = mesh.dim() + 1;
    let mut m = [[0.0; 3]; 3];
    for q in mesh.quadrature(e) {
        let c = q.weight * w(&q);
        for a in 0..k {
            for b in a..k {
                m[a][b] += c * q.bary[a] * q.bary[b];
            }
        }
    }
    // Mirror the upper triangle so the local matrix is exactly symmetric.
    for a in 0..k {
        for b in 0..a {
            m[a][b] = m[b][a];
        }
    }
    m
}

/// `∫ w φ_j φ_i`; `w ≡ 1` gives the mass matrix.
pub fn assemble_weighted_mass<W>(mesh: &Mesh, w: W) -> CsrMatrix
where
    W: Fn(&[f64]) -> f64 + Sync + Send,
{
    let d = mesh.dim();
    assemble_matrix(mesh, |e| weighted_mass_local(mesh, e, |q| w(&q.x[..d])))
}

/// `∫ w(x, u_h(x)) φ_j φ_i` with `u_h` the P1 function of `u`.
pub fn assemble_weighted_mass_with<W>(mesh: &Mesh, u: &[f64], w: W) -> Result<CsrMatrix>
where
    W: Fn(&[f64], f64) -> f64 + Sync + Send,
{
    check_dim(mesh.num_interior(), u.len())?;
    let d = mesh.dim();
    Ok(assemble_matrix(mesh, |e| {
        weighted_mass_local(mesh, e, |q| w(&q.x[..d], value_at(mesh, u, e, q)))
    }))
}

pub fn mass_matrix(mesh: &Mesh) -> CsrMatrix {
    assemble_weighted_mass(mesh, |_| 1.0)
}

fn load_local(mesh: &Mesh, e: usize, g: impl Fn(&QuadPoint) -> f64) -> [f64; 3] {
    let k = mesh.dim() + 1;
    let mut l = [0.0; 3];
    for q in mesh.quadrature(e) {
        let c = q.weight * g(&q);
        for a in 0..k {
            l[a] += c * q.bary[a];
        }
    }
    l
}

/// `∫ g φ_i` over interior basis functions.
pub fn assemble_load<G>(mesh: &Mesh, g: G) -> FemVector
where
    G: Fn(&[f64]) -> f64 + Sync + Send,
{
    let d = mesh.dim();
    assemble_vector(mesh, |e| load_local(mesh, e, |q| g(&q.x[..d])))
}

/// `∫ g(x, u_h(x)) φ_i` with `u_h` the P1 function of `u`.
pub fn assemble_load_with<G>(mesh: &Mesh, u: &[f64], g: G) -> Result<FemVector>
where
    G: Fn(&[f64], f64) -> f64 + Sync + Send,
{
    check_dim(mesh.num_interior(), u.len())?;
    let d = mesh.dim();
    Ok(assemble_vector(mesh, |e| {
        load_local(mesh, e, |q| g(&q.x[..d], value_at(mesh, u, e, q)))
    }))
}

/// Nodal interpolation onto interior vertices.
pub fn interpolate_at_nodes<F>(mesh: &Mesh, field: F) -> FemVector
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    Execution::default().map_range(mesh.num_interior(), |i| {
        field(mesh.vertex(mesh.vertex_of_dof(i)))
    })
}

/// Interpolates the coarse P1 function `u` onto the vertices of `fine`.
pub fn prolongate(coarse: &Mesh, u: &[f64], fine: &Mesh) -> Result<FemVector> {
    check_dim(coarse.num_interior(), u.len())?;
    check_dim(coarse.dim(), fine.dim())?;
    (0..fine.num_interior())
        .map(|i| coarse.evaluate(u, fine.vertex(fine.vertex_of_dof(i))))
        .collect()
}

/// `√(vᵀ M v)`.
pub fn l2_norm(mass: &CsrMatrix, v: &[f64]) -> Result<f64> {
    Ok(mass.quad_form(v)?.max(0.0).sqrt())
}

/// `√(vᵀ A v)`.
pub fn h1_seminorm(stiffness: &CsrMatrix, v: &[f64]) -> Result<f64> {
    Ok(stiffness.quad_form(v)?.max(0.0).sqrt())
}

/// `max_x |v(x) − reference(x)|` over all mesh vertices, boundary included.
pub fn max_norm<F>(mesh: &Mesh, v: &[f64], reference: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    check_dim(mesh.num_interior(), v.len())?;
    Ok((0..mesh.num_vertices())
        .map(|k| (mesh.nodal(v, k) - reference(mesh.vertex(k))).abs())
        .fold(0.0, f64::max))
}

/// `‖v − reference‖_0` by element quadrature, with `v` the P1 field.
pub fn l2_error<F>(mesh: &Mesh, v: &[f64], reference: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_dim(mesh.num_interior(), v.len())?;
    let dim = mesh.dim();
    let cells = Execution::default().map_range(mesh.num_elements(), |e| {
        let verts = mesh.element(e);
        mesh.quadrature(e)
            .iter()
            .map(|q| {
                let uh: f64 = verts
                    .iter()
                    .enumerate()
                    .map(|(k, &vk)| q.bary[k] * mesh.nodal(v, vk))
                    .sum();
                let d = uh - reference(&q.x[..dim]);
                q.weight * d * d
            })
            .sum::<f64>()
    });
    Ok(cells.iter().sum::<f64>().sqrt())
}

/// The three discrete norms of a coefficient vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l2: f64,
    pub h1: f64,
    pub max: f64,
}

/// Norms of `v`; with `reference` set, norms of `v − I_h reference`.
pub fn norms(
    mesh: &Mesh,
    v: &[f64],
    reference: Option<&(dyn Fn(&[f64]) -> f64 + Sync)>,
) -> Result<Norms> {
    check_dim(mesh.num_interior(), v.len())?;
    let diff: Vec<f64> = match reference {
        Some(r) => {
            let iu = interpolate_at_nodes(mesh, r);
            v.iter().zip(&iu).map(|(a, b)| a - b).collect()
        }
        None => v.to_vec(),
    };
    let m = mass_matrix(mesh);
    let a = assemble_stiffness(mesh, |_| 1.0);
    let max = match reference {
        Some(r) => max_norm(mesh, v, r)?,
        None => max_norm(mesh, v, |_| 0.0)?,
    };
    Ok(Norms {
        l2: l2_norm(&m, &diff)?,
        h1: h1_seminorm(&a, &diff)?,
        max,
    })
}

/// `vᵀ A v / vᵀ M v`.
pub fn rayleigh_quotient(stiffness: &CsrMatrix, mass: &CsrMatrix, v: &[f64]) -> Result<f64> {
    let num = dot(v, &matvec(stiffness, v)?);
    let den = dot(v, &matvec(mass, v)?);
    if den <= 0.0 {
        return Err(Error::Domain("Rayleigh quotient of a zero vector".into()));
    }
    Ok(num / den)
}
