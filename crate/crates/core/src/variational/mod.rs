//! Monte-Carlo trial-space training: samplers, loss functionals, the
//! boundary factor and the Adam loop.

mod domain;
mod losses;
mod train;

pub use domain::{
    sample_uniform, BoundaryPiece, BoundaryRole, PieceGeometry, ProblemDomain, Region,
};
pub use losses::{
    boundary_factor, constant_field, field, loss_eigen_j3, loss_eigen_j3_parts, loss_friction_j2,
    loss_gp_j5, loss_lsm, loss_ritz_linear, record_loss, Batches, FrictionJ2, FrozenField,
    GpEigenJ5, LinearEigenJ3, LossSpec, LsmSemilinear, Nonlinearity, RitzLinear, ScalarField,
    TrialFunction,
};
pub use train::{
    draw_batches, evaluate_loss, network_eigenvalue, train, train_monitored, Adam, AdamConfig,
    TrainConfig, TrainedModel, TrainingRecord,
};
