//! Forward propagation of second-order spatial jets and reverse-mode
//! accumulation of parameter gradients through them.

mod fd;
mod jet;
mod tape;

pub use fd::{fd_gradient_oracle, fd_partials};
pub use jet::{jet_activation, jet_affine, Activation, SpatialJet};
pub use tape::{reverse_gradient, OpKind, Part, Tape, UnaryKind, Var};
