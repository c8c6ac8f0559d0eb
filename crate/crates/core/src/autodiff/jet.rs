//! Second-order spatial jets: value, gradient and Hessian of a scalar field
//! at one point, propagated in forward mode.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialJet<const D: usize> {
    pub value: f64,
    pub grad: [f64; D],
    pub hess: [[f64; D]; D],
}

impl<const D: usize> Default for SpatialJet<D> {
    fn default() -> Self {
        Self::constant(0.0)
    }
}

impl<const D: usize> SpatialJet<D> {
    pub const ZERO: Self = Self {
        value: 0.0,
        grad: [0.0; D],
        hess: [[0.0; D]; D],
    };

    pub fn constant(value: f64) -> Self {
        Self {
            value,
            ..Self::ZERO
        }
    }

    /// Jet of the coordinate function `x ↦ x_i` at `x`.
    pub fn coordinate(x: &[f64; D], i: usize) -> Self {
        let mut jet = Self::constant(x[i]);
        jet.grad[i] = 1.0;
        jet
    }

    /// Builds a jet from its channels. Only the upper triangle of `hess` is
    /// read; the lower triangle is mirrored from it.
    pub fn from_parts(value: f64, grad: [f64; D], hess: [[f64; D]; D]) -> Self {
        let mut jet = Self { value, grad, hess };
        jet.mirror_hessian();
        jet
    }

    #[inline]
    pub(crate) fn mirror_hessian(&mut self) {
        for i in 0..D {
            for j in 0..i {
                self.hess[i][j] = self.hess[j][i];
            }
        }
    }

    pub fn laplacian(&self) -> f64 {
        (0..D).map(|i| self.hess[i][i]).sum()
    }

    pub fn grad_norm_sq(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum()
    }

    pub fn is_spatially_constant(&self) -> bool {
        self.grad.iter().all(|&g| g == 0.0) && self.hess.iter().flatten().all(|&h| h == 0.0)
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = *self;
        out.scale_in_place(c);
        out
    }

    #[inline]
    pub(crate) fn scale_in_place(&mut self, c: f64) {
        self.value *= c;
        self.grad.iter_mut().for_each(|g| *g *= c);
        self.hess.iter_mut().flatten().for_each(|h| *h *= c);
    }

    /// `self += c * other`
    #[inline]
    pub(crate) fn axpy(&mut self, c: f64, other: &Self) {
        self.value += c * other.value;
        for i in 0..D {
            self.grad[i] += c * other.grad[i];
        }
        for i in 0..D {
            for j in 0..D {
                self.hess[i][j] += c * other.hess[i][j];
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = *self;
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = *self;
        out.axpy(-1.0, other);
        out
    }

    /// Product rule up to second order.
    pub fn mul(&self, other: &Self) -> Self {
        let (a, b) = (self, other);
        let mut out = Self::constant(a.value * b.value);
        for i in 0..D {
            out.grad[i] = a.value * b.grad[i] + b.value * a.grad[i];
        }
        for i in 0..D {
            for j in i..D {
                out.hess[i][j] = a.value * b.hess[i][j]
                    + b.value * a.hess[i][j]
                    + a.grad[i] * b.grad[j]
                    + b.grad[i] * a.grad[j];
            }
        }
        out.mirror_hessian();
        out
    }

    /// Composition `g ∘ self` given `g(v), g'(v), g''(v)` at `v = self.value`.
    pub fn compose(&self, g0: f64, g1: f64, g2: f64) -> Self {
        let mut out = Self::constant(g0);
        for i in 0..D {
            out.grad[i] = g1 * self.grad[i];
        }
        for i in 0..D {
            for j in i..D {
                out.hess[i][j] = g1 * self.hess[i][j] + g2 * self.grad[i] * self.grad[j];
            }
        }
        out.mirror_hessian();
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    /// `max(x³, 0)`
    ReluCubed,
}

impl Activation {
    /// `[σ(v), σ'(v), σ''(v), σ'''(v)]`. Kinks at 0 use the zero one-sided
    /// derivative.
    #[inline]
    pub fn derivatives(self, v: f64) -> [f64; 4] {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    [v, 1.0, 0.0, 0.0]
                } else {
                    [0.0; 4]
                }
            }
            Activation::Tanh => {
                let t = v.tanh();
                let s = 1.0 - t * t;
                [t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)]
            }
            Activation::ReluCubed => {
                if v > 0.0 {
                    [v * v * v, 3.0 * v * v, 6.0 * v, 6.0]
                } else {
                    [0.0; 4]
                }
            }
        }
    }

    pub fn eval(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::ReluCubed => {
                if v > 0.0 {
                    v * v * v
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn jet_activation<const D: usize>(kind: Activation, input: &SpatialJet<D>) -> SpatialJet<D> {
    let [s0, s1, s2, _] = kind.derivatives(input.value);
    input.compose(s0, s1, s2)
}

/// `W · input + b` for a row-major `rows × cols` matrix `w`.
pub fn jet_affine<const D: usize>(
    w: &[f64],
    rows: usize,
    cols: usize,
    b: Option<&[f64]>,
    input: &[SpatialJet<D>],
) -> Result<Vec<SpatialJet<D>>> {
    check_dim(rows * cols, w.len())?;
    check_dim(cols, input.len())?;
    if let Some(b) = b {
        check_dim(rows, b.len())?;
    }
    Ok((0..rows)
        .map(|r| {
            let mut out = SpatialJet::constant(b.map_or(0.0, |b| b[r]));
            for (wj, xj) in w[r * cols..(r + 1) * cols].iter().zip(input) {
                out.axpy(*wj, xj);
            }
            out
        })
        .collect())
}
