//! Adam training loop and post-training evaluation of the learned field.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{SpatialJet, Tape};
use crate::error::{check_dim, Error, Result};
use crate::fem::Mesh;
use crate::network::{Checkpoint, Network, NetworkConfig};
use crate::par::Execution;

use super::domain::{sample_uniform, ProblemDomain, Region};
use super::losses::{boundary_factor, record_loss, Batches, LossSpec, TrialFunction};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_interior: usize,
    pub batch_boundary: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl TrainConfig {
    /// Learning rate 1e-3; 512 interior points in 1D, 1024 in 2D, and 256
    /// points per sampled boundary piece.
    pub fn standard(dim: usize, epochs: usize, seed: u64) -> Self {
        Self {
            learning_rate: 1e-3,
            batch_interior: if dim == 1 { 512 } else { 1024 },
            batch_boundary: 256,
            epochs,
            adam: AdamConfig::default(),
            seed,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_interior == 0 || self.batch_boundary == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        Ok(())
    }
}

/// Adam state for a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Batches for one epoch. The random stream is selected by the epoch index,
/// so every epoch's samples depend only on `(seed, epoch)`.
pub fn draw_batches<const D: usize>(
    domain: &ProblemDomain,
    spec: &LossSpec,
    train: &TrainConfig,
    epoch: u64,
) -> Result<Batches<D>> {
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    rng.set_stream(epoch);
    let interior = (0..spec.interior_batches())
        .map(|_| sample_uniform(domain, Region::Interior, train.batch_interior, &mut rng))
        .collect::<Result<_>>()?;
    let boundary = if spec.needs_boundary_batches() {
        domain
            .pieces
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let n = p.point_count().unwrap_or(train.batch_boundary);
                sample_uniform(domain, Region::Piece(k), n, &mut rng)
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(Batches { interior, boundary })
}

/// Loss value and parameter gradient of `model` on `batches`.
pub fn evaluate_loss<const D: usize, M: TrialFunction<D>>(
    model: &M,
    spec: &LossSpec,
    domain: &ProblemDomain,
    batches: &Batches<D>,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::<D>::new(model.params(), spec.needs_hessian()).with_execution(exec);
    let loss = record_loss(&mut tape, model, spec, domain, batches)?;
    let grad = tape.gradient(loss)?;
    Ok((tape.value(loss), grad))
}

/// The learned field `u^DL` with its training record.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub network: Network,
    pub loss: LossSpec,
    pub domain: ProblemDomain,
    pub loss_history: Vec<f64>,
    pub wall_time: f64,
}

impl TrainedModel {
    /// Jet of `u^DL` at `x` (the network times the boundary factor when the
    /// loss is built on one).
    pub fn jet<const D: usize>(&self, x: &[f64; D]) -> SpatialJet<D> {
        let psi = self.network.eval_jet(x);
        if self.loss.uses_boundary_factor() {
            boundary_factor(x, &self.domain.bounds).mul(&psi)
        } else {
            psi
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let psi = self.network.eval(x);
        if self.loss.uses_boundary_factor() {
            let b: f64 = (0..x.len())
                .map(|i| {
                    (x[i] - self.domain.bounds.lower[i]) * (self.domain.bounds.upper[i] - x[i])
                })
                .product();
            b * psi
        } else {
            psi
        }
    }

    pub fn record(&self) -> TrainingRecord {
        TrainingRecord {
            checkpoint: self.network.checkpoint(),
            loss: self.loss.name().to_string(),
            loss_history: self.loss_history.clone(),
            wall_time: self.wall_time,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.record())?)?;
        Ok(())
    }
}

/// Serialisable part of a [`TrainedModel`]; loss coefficients are closures
/// and are recovered from the problem registry by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub checkpoint: Checkpoint,
    pub loss: String,
    pub loss_history: Vec<f64>,
    pub wall_time: f64,
}

/// Runs `train.epochs` Adam steps on freshly drawn batches.
pub fn train(
    config: NetworkConfig,
    loss: &LossSpec,
    domain: &ProblemDomain,
    train: &TrainConfig,
) -> Result<TrainedModel> {
    train_monitored(config, loss, domain, train, 0, |_, _| {})
}

/// [`train`] that hands a snapshot of the model to `monitor` after every
/// `every` epochs (never when `every` is 0). The snapshot's history covers
/// the epochs run so far.
pub fn train_monitored<F>(
    config: NetworkConfig,
    loss: &LossSpec,
    domain: &ProblemDomain,
    train: &TrainConfig,
    every: usize,
    mut monitor: F,
) -> Result<TrainedModel>
where
    F: FnMut(usize, &TrainedModel),
{
    config.validate()?;
    train.validate()?;
    check_dim(domain.dim(), config.input_dim)?;
    loss.validate(domain)?;
    let network = Network::init(config)?;
    match domain.dim() {
        1 => train_dim::<1>(network, loss, domain, train, every, &mut monitor),
        2 => train_dim::<2>(network, loss, domain, train, every, &mut monitor),
        d => Err(Error::Config(format!("unsupported dimension {d}"))),
    }
}

fn train_dim<const D: usize>(
    mut network: Network,
    loss: &LossSpec,
    domain: &ProblemDomain,
    train: &TrainConfig,
    every: usize,
    monitor: &mut dyn FnMut(usize, &TrainedModel),
) -> Result<TrainedModel> {
    let start = Instant::now();
    let mut adam = Adam::new(network.params.len(), train.learning_rate, train.adam);
    let mut history = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let batches = draw_batches::<D>(domain, loss, train, epoch as u64)?;
        let (value, grad) = evaluate_loss(&network, loss, domain, &batches, train.execution)
            .map_err(|e| match e {
                Error::DegenerateNetwork(detail) => Error::NonFiniteLoss { epoch, detail },
                other => other,
            })?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                detail: format!("loss {value}"),
            });
        }
        history.push(value);
        adam.step(network.params.as_mut_slice(), &grad);
        if every > 0 && (epoch + 1) % every == 0 {
            let snapshot = TrainedModel {
                network: network.clone(),
                loss: loss.clone(),
                domain: domain.clone(),
                loss_history: history.clone(),
                wall_time: start.elapsed().as_secs_f64(),
            };
            monitor(epoch + 1, &snapshot);
        }
    }
    Ok(TrainedModel {
        network,
        loss: loss.clone(),
        domain: domain.clone(),
        loss_history: history,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Eigenvalue of a learned eigenfunction, by element quadrature on `mesh`.
///
/// For the linear problem this is `∫(p|∇φ|² + qφ²) / ∫φ²`. For the
/// Gross–Pitaevskii problem `φ` is first normalised in `L²` and the value is
/// `∫|∇u|² + ∫Vu² + β∫u⁴`.
pub fn network_eigenvalue<const D: usize>(
    phi: &(dyn Fn(&[f64; D]) -> SpatialJet<D> + Sync),
    spec: &LossSpec,
    mesh: &Mesh,
) -> Result<f64> {
    check_dim(mesh.dim(), D)?;
    let cells = Execution::default().map_range(mesh.num_elements(), |e| {
        let mut acc = [0.0; 4];
        for q in mesh.quadrature(e) {
            let x: [f64; D] = std::array::from_fn(|i| q.x[i]);
            let j = phi(&x);
            let (g2, u2) = (j.grad_norm_sq(), j.value * j.value);
            let (p, qv) = match spec {
                LossSpec::Eigen(s) => ((s.p)(&x), (s.q)(&x)),
                LossSpec::Gp(s) => (1.0, (s.potential)(&x)),
                _ => (1.0, 0.0),
            };
            acc[0] += q.weight * p * g2;
            acc[1] += q.weight * qv * u2;
            acc[2] += q.weight * u2;
            acc[3] += q.weight * u2 * u2;
        }
        acc
    });
    let mut s = [0.0; 4];
    for c in cells {
        for k in 0..4 {
            s[k] += c[k];
        }
    }
    let [grad, pot, mass, quartic] = s;
    if !(mass > 0.0) {
        return Err(Error::DegenerateNetwork(
            "eigenfunction has zero L2 norm".into(),
        ));
    }
    match spec {
        LossSpec::Eigen(_) => Ok((grad + pot) / mass),
        LossSpec::Gp(g) => Ok((grad + pot) / mass + g.beta * quartic / (mass * mass)),
        _ => Err(Error::Config(
            "eigenvalue requested for a non-eigenvalue loss".into(),
        )),
    }
}
