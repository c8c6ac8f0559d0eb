//! Reverse-mode tape whose nodes carry [`SpatialJet`] values.
//!
//! Every node holds the value, spatial gradient and (optionally) spatial
//! Hessian of some field at a fixed point, so a loss may contain `∇φ` and
//! `Δφ` and still be differentiated with respect to the trainable
//! parameters. The reverse sweep propagates jet-shaped adjoints; the local
//! partials of the gradient and Hessian channels need up to third
//! derivatives of unary functions, which are cached on the node.
//!
//! Batch means over sample points are recorded as independent sub-tapes
//! ([`Tape::batch_mean`]) that are built and reverse-swept per sample, in
//! parallel when the execution policy allows. Per-chunk parameter gradients
//! are reduced in chunk order, so results do not depend on the policy.

use super::jet::{Activation, SpatialJet};
use crate::error::{Error, Result};
use crate::par::Execution;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Samples per reduction chunk in batch means. Fixed so that the summation
/// order is independent of the thread count.
const REDUCTION_CHUNK: usize = 16;

const NO_BIAS: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Activation(Activation),
    Reciprocal,
    Abs,
    Square,
    Power(f64),
    /// User-supplied scalar map with explicit derivatives.
    Map,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Value,
    Grad(usize),
    Laplacian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Constant,
    Parameter,
    Add,
    Sub,
    Mul,
    Scale,
    Affine,
    Activation,
    Reciprocal,
    Abs,
    Square,
    Power,
    Map,
    Component,
    Sum,
    BatchMean,
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Parameter(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Scale(u32, f64),
    Affine {
        first: u32,
        len: u32,
        weights: u32,
        bias: u32,
    },
    Unary {
        kind: UnaryKind,
        arg: u32,
        /// First, second and third derivative at the argument's value.
        d: [f64; 3],
    },
    Component {
        arg: u32,
        part: Part,
    },
    Sum(Box<[u32]>),
    BatchMean {
        group: u32,
        slot: u32,
    },
}

struct SubTape<'p, const D: usize> {
    tape: Tape<'p, D>,
    outputs: Vec<Var>,
}

struct BatchGroup<'p, const D: usize> {
    samples: Vec<SubTape<'p, D>>,
    first_output: u32,
    outputs: u32,
}

pub struct Tape<'p, const D: usize> {
    params: &'p [f64],
    hessian: bool,
    exec: Execution,
    ops: Vec<Op>,
    vals: Vec<SpatialJet<D>>,
    groups: Vec<BatchGroup<'p, D>>,
}

impl<'p, const D: usize> Tape<'p, D> {
    /// A tape over the parameter vector `params`. With `hessian == false`
    /// the Hessian channel is neither computed nor differentiated.
    pub fn new(params: &'p [f64], hessian: bool) -> Self {
        Self {
            params,
            hessian,
            exec: Execution::default(),
            ops: Vec::new(),
            vals: Vec::new(),
            groups: Vec::new(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn tracks_hessian(&self) -> bool {
        self.hessian
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn jet(&self, v: Var) -> &SpatialJet<D> {
        &self.vals[v.index()]
    }

    pub fn value(&self, v: Var) -> f64 {
        self.vals[v.index()].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        match &self.ops[v.index()] {
            Op::Constant => OpKind::Constant,
            Op::Parameter(_) => OpKind::Parameter,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Affine { .. } => OpKind::Affine,
            Op::Unary { kind, .. } => match kind {
                UnaryKind::Activation(_) => OpKind::Activation,
                UnaryKind::Reciprocal => OpKind::Reciprocal,
                UnaryKind::Abs => OpKind::Abs,
                UnaryKind::Square => OpKind::Square,
                UnaryKind::Power(_) => OpKind::Power,
                UnaryKind::Map => OpKind::Map,
            },
            Op::Component { .. } => OpKind::Component,
            Op::Sum(_) => OpKind::Sum,
            Op::BatchMean { .. } => OpKind::BatchMean,
        }
    }

    fn push(&mut self, op: Op, mut val: SpatialJet<D>) -> Var {
        if !self.hessian {
            val.hess = [[0.0; D]; D];
        }
        let idx = u32::try_from(self.ops.len()).expect("tape exceeds u32 nodes");
        self.ops.push(op);
        self.vals.push(val);
        Var(idx)
    }

    pub fn constant(&mut self, jet: SpatialJet<D>) -> Var {
        self.push(Op::Constant, jet)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(SpatialJet::constant(value))
    }

    /// Consecutive constant nodes seeded with the coordinate jets of `x`.
    pub fn coordinates(&mut self, x: &[f64; D]) -> Vec<Var> {
        (0..D)
            .map(|i| self.constant(SpatialJet::coordinate(x, i)))
            .collect()
    }

    pub fn param(&mut self, index: usize) -> Var {
        let value = self.params[index];
        self.push(Op::Parameter(index as u32), SpatialJet::constant(value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let val = self.vals[a.index()].add(&self.vals[b.index()]);
        self.push(Op::Add(a.0, b.0), val)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let val = self.vals[a.index()].sub(&self.vals[b.index()]);
        self.push(Op::Sub(a.0, b.0), val)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ja, jb) = (&self.vals[a.index()], &self.vals[b.index()]);
        let val = if self.hessian {
            ja.mul(jb)
        } else {
            let mut out = SpatialJet::constant(ja.value * jb.value);
            for i in 0..D {
                out.grad[i] = ja.value * jb.grad[i] + jb.value * ja.grad[i];
            }
            out
        };
        self.push(Op::Mul(a.0, b.0), val)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let val = self.vals[a.index()].scale(c);
        self.push(Op::Scale(a.0, c), val)
    }

    fn unary(&mut self, kind: UnaryKind, arg: Var, d: [f64; 4]) -> Var {
        let x = &self.vals[arg.index()];
        let val = if self.hessian {
            x.compose(d[0], d[1], d[2])
        } else {
            let mut out = SpatialJet::constant(d[0]);
            for i in 0..D {
                out.grad[i] = d[1] * x.grad[i];
            }
            out
        };
        self.push(
            Op::Unary {
                kind,
                arg: arg.0,
                d: [d[1], d[2], d[3]],
            },
            val,
        )
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Var {
        let d = kind.derivatives(self.value(a));
        self.unary(UnaryKind::Activation(kind), a, d)
    }

    pub fn reciprocal(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let r = 1.0 / v;
        let d = [r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r];
        self.unary(UnaryKind::Reciprocal, a, d)
    }

    /// `|a|` with derivative 0 at the kink.
    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(UnaryKind::Abs, a, [v.abs(), s, 0.0, 0.0])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a);
        self.unary(UnaryKind::Square, a, [v * v, 2.0 * v, 2.0, 0.0])
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a);
        let d = [
            v.powf(p),
            p * v.powf(p - 1.0),
            p * (p - 1.0) * v.powf(p - 2.0),
            p * (p - 1.0) * (p - 2.0) * v.powf(p - 3.0),
        ];
        self.unary(UnaryKind::Power(p), a, d)
    }

    /// Applies a scalar function given its value and first three
    /// derivatives at the current value of `a`.
    pub fn map(&mut self, a: Var, derivatives: [f64; 4]) -> Var {
        self.unary(UnaryKind::Map, a, derivatives)
    }

    pub fn component(&mut self, a: Var, part: Part) -> Var {
        let x = &self.vals[a.index()];
        let v = match part {
            Part::Value => x.value,
            Part::Grad(i) => x.grad[i],
            Part::Laplacian => {
                assert!(
                    self.hessian,
                    "Laplacian requested on a tape without Hessian tracking"
                );
                x.laplacian()
            }
        };
        self.push(Op::Component { arg: a.0, part }, SpatialJet::constant(v))
    }

    /// `Σ_i (∂a/∂x_i)²` as a spatially constant node.
    pub fn grad_norm_sq(&mut self, a: Var) -> Var {
        let parts: Vec<Var> = (0..D)
            .map(|i| {
                let g = self.component(a, Part::Grad(i));
                self.square(g)
            })
            .collect();
        self.sum(&parts)
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let mut val = SpatialJet::ZERO;
        for t in terms {
            val.axpy(1.0, &self.vals[t.index()]);
        }
        let idx: Box<[u32]> = terms.iter().map(|t| t.0).collect();
        self.push(Op::Sum(idx), val)
    }

    /// Fully connected layer `W · inputs + b` with `W` stored row-major
    /// (`rows × inputs.len()`) at `weights` in the parameter vector and `b`
    /// (if any) at `bias`. `inputs` must be consecutive nodes; the outputs
    /// are consecutive as well.
    pub fn dense(
        &mut self,
        inputs: &[Var],
        weights: usize,
        rows: usize,
        bias: Option<usize>,
    ) -> Vec<Var> {
        let cols = inputs.len();
        assert!(cols > 0, "dense layer without inputs");
        let first = inputs[0].0;
        assert!(
            inputs
                .iter()
                .enumerate()
                .all(|(j, v)| v.0 == first + j as u32),
            "dense layer inputs must be consecutive tape nodes"
        );
        assert!(
            weights + rows * cols <= self.params.len(),
            "weights out of range"
        );
        let input = &self.vals[first as usize..first as usize + cols];
        let hessian = self.hessian;
        let outs: Vec<SpatialJet<D>> = (0..rows)
            .map(|r| {
                let w = &self.params[weights + r * cols..weights + (r + 1) * cols];
                let mut out = SpatialJet::constant(bias.map_or(0.0, |b| self.params[b + r]));
                for (wj, xj) in w.iter().zip(input) {
                    out.value += wj * xj.value;
                    for i in 0..D {
                        out.grad[i] += wj * xj.grad[i];
                    }
                    if hessian {
                        for i in 0..D {
                            for k in i..D {
                                out.hess[i][k] += wj * xj.hess[i][k];
                            }
                        }
                    }
                }
                out.mirror_hessian();
                out
            })
            .collect();
        outs.into_iter()
            .enumerate()
            .map(|(r, val)| {
                self.push(
                    Op::Affine {
                        first,
                        len: cols as u32,
                        weights: (weights + r * cols) as u32,
                        bias: bias.map_or(NO_BIAS, |b| (b + r) as u32),
                    },
                    val,
                )
            })
            .collect()
    }

    /// Records `k` nodes holding the batch means of per-sample outputs.
    ///
    /// `points` is split into samples of `arity` consecutive points; `f`
    /// builds the per-sample expression on a fresh sub-tape sharing this
    /// tape's parameters and returns exactly `k` output nodes.
    pub fn batch_mean<F>(&mut self, points: &[[f64; D]], arity: usize, k: usize, f: F) -> Vec<Var>
    where
        F: Fn(&mut Tape<'p, D>, &[[f64; D]]) -> Vec<Var> + Sync,
    {
        assert!(arity >= 1 && k >= 1);
        assert!(
            !points.is_empty() && points.len() % arity == 0,
            "batch size must be a positive multiple of the arity"
        );
        let n = points.len() / arity;
        let params = self.params;
        let hessian = self.hessian;
        let samples: Vec<SubTape<'p, D>> = self.exec.map_range(n, |s| {
            let mut tape = Tape::new(params, hessian).with_execution(Execution::Sequential);
            let outputs = f(&mut tape, &points[s * arity..(s + 1) * arity]);
            assert_eq!(
                outputs.len(),
                k,
                "per-sample closure returned the wrong number of outputs"
            );
            SubTape { tape, outputs }
        });
        let inv_n = 1.0 / n as f64;
        let means: Vec<SpatialJet<D>> = (0..k)
            .map(|slot| {
                let mut acc = SpatialJet::ZERO;
                for s in &samples {
                    acc.axpy(1.0, s.tape.jet(s.outputs[slot]));
                }
                acc.scale(inv_n)
            })
            .collect();
        let group = self.groups.len() as u32;
        let first_output = self.ops.len() as u32;
        self.groups.push(BatchGroup {
            samples,
            first_output,
            outputs: k as u32,
        });
        means
            .into_iter()
            .enumerate()
            .map(|(slot, m)| {
                self.push(
                    Op::BatchMean {
                        group,
                        slot: slot as u32,
                    },
                    m,
                )
            })
            .collect()
    }

    /// Gradient of `root` with respect to every parameter.
    pub fn gradient(&self, root: Var) -> Result<Vec<f64>> {
        if !self.vals[root.index()].is_spatially_constant() {
            return Err(Error::NonScalarRoot);
        }
        let mut grad = vec![0.0; self.params.len()];
        self.reverse(&[(root, SpatialJet::constant(1.0))], &mut grad);
        Ok(grad)
    }

    /// Reverse sweep seeded with jet-shaped adjoints; parameter adjoints are
    /// accumulated into `grad`.
    fn reverse(&self, seeds: &[(Var, SpatialJet<D>)], grad: &mut [f64]) {
        let Some(top) = seeds.iter().map(|(v, _)| v.index()).max() else {
            return;
        };
        let mut adj = vec![SpatialJet::<D>::ZERO; top + 1];
        for (v, s) in seeds {
            adj[v.index()].axpy(1.0, s);
        }
        let hessian = self.hessian;
        for i in (0..=top).rev() {
            let out = adj[i];
            if out == SpatialJet::ZERO {
                continue;
            }
            match &self.ops[i] {
                Op::Constant => {}
                Op::Parameter(k) => grad[*k as usize] += out.value,
                Op::Add(a, b) => {
                    adj[*a as usize].axpy(1.0, &out);
                    adj[*b as usize].axpy(1.0, &out);
                }
                Op::Sub(a, b) => {
                    adj[*a as usize].axpy(1.0, &out);
                    adj[*b as usize].axpy(-1.0, &out);
                }
                Op::Scale(a, c) => adj[*a as usize].axpy(*c, &out),
                Op::Mul(a, b) => {
                    let (a, b) = (*a as usize, *b as usize);
                    let (ja, jb) = (self.vals[a], self.vals[b]);
                    mul_adjoint(&mut adj[a], &out, &jb, hessian);
                    mul_adjoint(&mut adj[b], &out, &ja, hessian);
                }
                Op::Unary { arg, d, .. } => {
                    let arg = *arg as usize;
                    let x = self.vals[arg];
                    unary_adjoint(&mut adj[arg], &out, &x, d, hessian);
                }
                Op::Component { arg, part } => {
                    let a = &mut adj[*arg as usize];
                    match part {
                        Part::Value => a.value += out.value,
                        Part::Grad(k) => a.grad[*k] += out.value,
                        Part::Laplacian => {
                            for k in 0..D {
                                a.hess[k][k] += out.value;
                            }
                        }
                    }
                }
                Op::Sum(terms) => {
                    for t in terms.iter() {
                        adj[*t as usize].axpy(1.0, &out);
                    }
                }
                Op::Affine {
                    first,
                    len,
                    weights,
                    bias,
                } => {
                    let (first, len, weights) = (*first as usize, *len as usize, *weights as usize);
                    for j in 0..len {
                        let w = self.params[weights + j];
                        let x = &self.vals[first + j];
                        let target = &mut adj[first + j];
                        target.value += w * out.value;
                        let mut g = x.value * out.value;
                        for k in 0..D {
                            target.grad[k] += w * out.grad[k];
                            g += x.grad[k] * out.grad[k];
                        }
                        if hessian {
                            for k in 0..D {
                                for l in 0..D {
                                    target.hess[k][l] += w * out.hess[k][l];
                                    g += x.hess[k][l] * out.hess[k][l];
                                }
                            }
                        }
                        grad[weights + j] += g;
                    }
                    if *bias != NO_BIAS {
                        grad[*bias as usize] += out.value;
                    }
                }
                Op::BatchMean { group, slot } => {
                    if *slot == 0 {
                        let g = &self.groups[*group as usize];
                        let first = g.first_output as usize;
                        let scale = 1.0 / g.samples.len() as f64;
                        let seeds: Vec<SpatialJet<D>> = (0..g.outputs as usize)
                            .map(|s| adj[first + s].scale(scale))
                            .collect();
                        self.reverse_group(g, &seeds, grad);
                    }
                }
            }
        }
    }

    fn reverse_group(&self, group: &BatchGroup<'p, D>, seeds: &[SpatialJet<D>], grad: &mut [f64]) {
        let p = self.params.len();
        let partials = self
            .exec
            .map_chunks(&group.samples, REDUCTION_CHUNK, |chunk| {
                let mut local = vec![0.0; p];
                for sample in chunk {
                    let s: Vec<(Var, SpatialJet<D>)> = sample
                        .outputs
                        .iter()
                        .copied()
                        .zip(seeds.iter().copied())
                        .collect();
                    sample.tape.reverse(&s, &mut local);
                }
                local
            });
        for local in partials {
            for (g, l) in grad.iter_mut().zip(&local) {
                *g += l;
            }
        }
    }
}

#[inline]
fn mul_adjoint<const D: usize>(
    target: &mut SpatialJet<D>,
    out: &SpatialJet<D>,
    other: &SpatialJet<D>,
    hessian: bool,
) {
    let mut v = out.value * other.value;
    for i in 0..D {
        v += out.grad[i] * other.grad[i];
        target.grad[i] += out.grad[i] * other.value;
    }
    if hessian {
        for i in 0..D {
            for j in 0..D {
                v += out.hess[i][j] * other.hess[i][j];
                target.grad[i] += (out.hess[i][j] + out.hess[j][i]) * other.grad[j];
                target.hess[i][j] += out.hess[i][j] * other.value;
            }
        }
    }
    target.value += v;
}

#[inline]
fn unary_adjoint<const D: usize>(
    target: &mut SpatialJet<D>,
    out: &SpatialJet<D>,
    x: &SpatialJet<D>,
    d: &[f64; 3],
    hessian: bool,
) {
    let [d1, d2, d3] = *d;
    let mut v = d1 * out.value;
    for i in 0..D {
        v += d2 * out.grad[i] * x.grad[i];
        target.grad[i] += d1 * out.grad[i];
    }
    if hessian {
        for i in 0..D {
            for j in 0..D {
                let o = out.hess[i][j];
                v += d2 * o * x.hess[i][j] + d3 * o * x.grad[i] * x.grad[j];
                target.grad[i] += d2 * (o + out.hess[j][i]) * x.grad[j];
                target.hess[i][j] += d1 * o;
            }
        }
    }
    target.value += v;
}

/// Reverse-mode gradient of the scalar node `loss`.
pub fn reverse_gradient<const D: usize>(tape: &Tape<'_, D>, loss: Var) -> Result<Vec<f64>> {
    tape.gradient(loss)
}
