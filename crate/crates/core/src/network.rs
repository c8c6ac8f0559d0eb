//! Fully connected and residual networks `φ(x; θ)` with scalar output.
//!
//! The residual variant follows
//!
//! ```text
//! h_0 = V x,   g_ℓ = σ(W_ℓ h_{ℓ-1} + b_ℓ),   h_ℓ = Ū_ℓ h_{ℓ-2} + g_ℓ,   φ = aᵀ h_L
//! ```
//!
//! with `Ū_ℓ = I` for even `ℓ`, `Ū_ℓ = 0` for odd `ℓ` and `h_{-1} = 0`. The
//! matrices `U_ℓ` are the identity and are not stored.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, SpatialJet, Tape, Var};
use crate::error::{check_dim, Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Fnn,
    Resnet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub arch: Architecture,
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
    pub input_dim: usize,
    pub seed: u64,
}

impl NetworkConfig {
    /// Residual network of width 50 and depth 6 with `max(x³, 0)`.
    pub fn standard(input_dim: usize, seed: u64) -> Self {
        Self {
            arch: Architecture::Resnet,
            width: 50,
            depth: 6,
            activation: Activation::ReluCubed,
            input_dim,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 {
            return Err(Error::Config(
                "network width and depth must be positive".into(),
            ));
        }
        if !(1..=2).contains(&self.input_dim) {
            return Err(Error::Config(format!(
                "input dimension must be 1 or 2, got {}",
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|e| e.len()).sum()
    }

    pub fn layout(&self) -> Vec<LayoutEntry> {
        let (n, d) = (self.width, self.input_dim);
        let mut entries = Vec::with_capacity(2 * self.depth + 2);
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            entries.push(LayoutEntry {
                name,
                offset,
                rows,
                cols,
            });
            offset += rows * cols;
        };
        match self.arch {
            Architecture::Resnet => {
                push("V".into(), n, d);
                for l in 1..=self.depth {
                    push(format!("W{l}"), n, n);
                    push(format!("b{l}"), n, 1);
                }
            }
            Architecture::Fnn => {
                for l in 1..=self.depth {
                    push(format!("W{l}"), n, if l == 1 { d } else { n });
                    push(format!("b{l}"), n, 1);
                }
            }
        }
        push("a".into(), 1, n);
        entries
    }
}

/// A named block of the flat parameter vector, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    data: Vec<f64>,
    layout: Vec<LayoutEntry>,
}

impl ParamVector {
    /// Checks that the layout tiles `[0, data.len())` without gaps or overlap.
    pub fn new(data: Vec<f64>, layout: Vec<LayoutEntry>) -> Result<Self> {
        let mut sorted: Vec<&LayoutEntry> = layout.iter().collect();
        sorted.sort_by_key(|e| e.offset);
        let mut next = 0;
        for e in sorted {
            if e.offset != next {
                return Err(Error::Config(format!(
                    "layout block `{}` does not start at {next}",
                    e.name
                )));
            }
            next += e.len();
        }
        check_dim(next, data.len())?;
        Ok(Self { data, layout })
    }

    pub fn zeros(layout: Vec<LayoutEntry>) -> Self {
        let len = layout.iter().map(|e| e.len()).sum();
        Self {
            data: vec![0.0; len],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    pub fn entry(&self, name: &str) -> Option<&LayoutEntry> {
        self.layout.iter().find(|e| e.name == name)
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.entry(name).map(|e| &self.data[e.range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.entry(name)?.range();
        Some(&mut self.data[range])
    }
}

/// Offsets of the blocks inside the flat parameter vector.
#[derive(Clone, Debug)]
struct Offsets {
    /// `V` for residual networks; `None` for FNNs.
    embed: Option<usize>,
    weights: Vec<usize>,
    biases: Vec<usize>,
    output: usize,
}

impl Offsets {
    fn of(config: &NetworkConfig) -> Self {
        let layout = config.layout();
        let find = |name: &str| layout.iter().find(|e| e.name == name).map(|e| e.offset);
        Offsets {
            embed: find("V"),
            weights: (1..=config.depth)
                .map(|l| find(&format!("W{l}")).unwrap())
                .collect(),
            biases: (1..=config.depth)
                .map(|l| find(&format!("b{l}")).unwrap())
                .collect(),
            output: find("a").unwrap(),
        }
    }
}

/// Arithmetic needed to run the forward recursion on some value type.
trait LayerOps {
    type Value: Copy;
    fn dense(
        &mut self,
        inputs: &[Self::Value],
        weights: usize,
        rows: usize,
        bias: Option<usize>,
    ) -> Vec<Self::Value>;
    fn activate(&mut self, kind: Activation, v: Self::Value) -> Self::Value;
    fn add(&mut self, a: Self::Value, b: Self::Value) -> Self::Value;
}

fn forward<B: LayerOps>(
    ops: &mut B,
    config: &NetworkConfig,
    off: &Offsets,
    input: Vec<B::Value>,
) -> B::Value {
    let n = config.width;
    let layer = |ops: &mut B, h: &[B::Value], l: usize| -> Vec<B::Value> {
        let pre = ops.dense(h, off.weights[l], n, Some(off.biases[l]));
        pre.into_iter()
            .map(|v| ops.activate(config.activation, v))
            .collect()
    };
    let top = match config.arch {
        Architecture::Fnn => {
            let mut h = input;
            for l in 0..config.depth {
                h = layer(ops, &h, l);
            }
            h
        }
        Architecture::Resnet => {
            let h0 = ops.dense(&input, off.embed.expect("residual layout has V"), n, None);
            // hist[ℓ] = h_ℓ
            let mut hist: Vec<Vec<B::Value>> = vec![h0];
            for l in 1..=config.depth {
                let g = layer(ops, &hist[l - 1], l - 1);
                let h = if l % 2 == 0 {
                    hist[l - 2]
                        .iter()
                        .zip(&g)
                        .map(|(&a, &b)| ops.add(a, b))
                        .collect()
                } else {
                    g
                };
                hist.push(h);
            }
            hist.pop().unwrap()
        }
    };
    ops.dense(&top, off.output, 1, None)[0]
}

struct PlainOps<'a> {
    params: &'a [f64],
}

impl LayerOps for PlainOps<'_> {
    type Value = f64;

    fn dense(
        &mut self,
        inputs: &[f64],
        weights: usize,
        rows: usize,
        bias: Option<usize>,
    ) -> Vec<f64> {
        let cols = inputs.len();
        (0..rows)
            .map(|r| {
                let w = &self.params[weights + r * cols..weights + (r + 1) * cols];
                let b = bias.map_or(0.0, |b| self.params[b + r]);
                // Same accumulation order as the jet path, so the value
                // channels agree bitwise.
                w.iter().zip(inputs).fold(b, |acc, (w, x)| acc + w * x)
            })
            .collect()
    }

    fn activate(&mut self, kind: Activation, v: f64) -> f64 {
        kind.eval(v)
    }

    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }
}

struct JetOps<'a, const D: usize> {
    params: &'a [f64],
}

impl<const D: usize> LayerOps for JetOps<'_, D> {
    type Value = SpatialJet<D>;

    fn dense(
        &mut self,
        inputs: &[SpatialJet<D>],
        weights: usize,
        rows: usize,
        bias: Option<usize>,
    ) -> Vec<SpatialJet<D>> {
        let cols = inputs.len();
        let params = self.params;
        (0..rows)
            .map(|r| {
                let w = &params[weights + r * cols..weights + (r + 1) * cols];
                let mut out = SpatialJet::constant(bias.map_or(0.0, |b| params[b + r]));
                for (wj, xj) in w.iter().zip(inputs) {
                    out.axpy(*wj, xj);
                }
                out
            })
            .collect()
    }

    fn activate(&mut self, kind: Activation, v: SpatialJet<D>) -> SpatialJet<D> {
        crate::autodiff::jet_activation(kind, &v)
    }

    fn add(&mut self, a: SpatialJet<D>, b: SpatialJet<D>) -> SpatialJet<D> {
        a.add(&b)
    }
}

struct TapeOps<'t, 'p, const D: usize> {
    tape: &'t mut Tape<'p, D>,
    base: usize,
}

impl<const D: usize> LayerOps for TapeOps<'_, '_, D> {
    type Value = Var;

    fn dense(
        &mut self,
        inputs: &[Var],
        weights: usize,
        rows: usize,
        bias: Option<usize>,
    ) -> Vec<Var> {
        self.tape.dense(
            inputs,
            self.base + weights,
            rows,
            bias.map(|b| self.base + b),
        )
    }

    fn activate(&mut self, kind: Activation, v: Var) -> Var {
        self.tape.activation(kind, v)
    }

    fn add(&mut self, a: Var, b: Var) -> Var {
        self.tape.add(a, b)
    }
}

/// Glorot-uniform weights, zero biases, output layer scaled by `1/N`.
pub fn init_network(config: &NetworkConfig) -> Result<ParamVector> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layout = config.layout();
    let mut params = ParamVector::zeros(layout.clone());
    let n = config.width as f64;
    for e in &layout {
        if e.name.starts_with('b') {
            continue;
        }
        let (fan_in, fan_out) = (e.cols as f64, e.rows as f64);
        let limit = (6.0 / (fan_in + fan_out)).sqrt();
        let scale = if e.name == "a" { 1.0 / n } else { 1.0 };
        for w in &mut params.as_mut_slice()[e.range()] {
            *w = scale * rng.gen_range(-limit..=limit);
        }
    }
    Ok(params)
}

/// `φ(x; θ)`.
pub fn eval_network(params: &ParamVector, config: &NetworkConfig, x: &[f64]) -> Result<f64> {
    check_dim(config.input_dim, x.len())?;
    check_dim(config.param_count(), params.len())?;
    let off = Offsets::of(config);
    Ok(forward(
        &mut PlainOps {
            params: params.as_slice(),
        },
        config,
        &off,
        x.to_vec(),
    ))
}

/// Value, gradient and Hessian of `φ(·; θ)` at `x`.
pub fn eval_network_jet<const D: usize>(
    params: &ParamVector,
    config: &NetworkConfig,
    x: &[f64; D],
) -> Result<SpatialJet<D>> {
    check_dim(config.input_dim, D)?;
    check_dim(config.param_count(), params.len())?;
    let off = Offsets::of(config);
    let input = (0..D).map(|i| SpatialJet::coordinate(x, i)).collect();
    let mut ops = JetOps::<D> {
        params: params.as_slice(),
    };
    Ok(forward(&mut ops, config, &off, input))
}

/// A network bound to its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: NetworkConfig,
    pub params: ParamVector,
}

impl Network {
    pub fn init(config: NetworkConfig) -> Result<Self> {
        let params = init_network(&config)?;
        Ok(Self { config, params })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        eval_network(&self.params, &self.config, x).expect("input dimension")
    }

    pub fn eval_jet<const D: usize>(&self, x: &[f64; D]) -> SpatialJet<D> {
        eval_network_jet(&self.params, &self.config, x).expect("input dimension")
    }

    /// Records `φ(x)` on `tape`; the network's parameters start at
    /// `param_offset` within the tape's parameter vector.
    pub fn on_tape<const D: usize>(
        &self,
        tape: &mut Tape<'_, D>,
        param_offset: usize,
        x: &[f64; D],
    ) -> Var {
        record_network(tape, &self.config, param_offset, x)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            layout: self.params.layout().to_vec(),
            params: self.params.as_slice().to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.checkpoint())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ck.into_network()
    }
}

/// Records the network on a tape whose parameter vector holds `θ` at
/// `param_offset`.
pub fn record_network<const D: usize>(
    tape: &mut Tape<'_, D>,
    config: &NetworkConfig,
    param_offset: usize,
    x: &[f64; D],
) -> Var {
    let off = Offsets::of(config);
    let input = tape.coordinates(x);
    forward(
        &mut TapeOps {
            tape,
            base: param_offset,
        },
        config,
        &off,
        input,
    )
}

/// On-disk form of a [`Network`]: configuration plus parameters in layout order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: NetworkConfig,
    pub layout: Vec<LayoutEntry>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn into_network(self) -> Result<Network> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        self.config.validate()?;
        if self.layout != self.config.layout() {
            return Err(Error::Parse(
                "checkpoint layout does not match its configuration".into(),
            ));
        }
        let params = ParamVector::new(self.params, self.layout)?;
        Ok(Network {
            config: self.config,
            params,
        })
    }
}
