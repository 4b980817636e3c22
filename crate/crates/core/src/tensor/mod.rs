//! Dense row-major matrices, a feed-forward network with hand-written
//! backpropagation, and the SGD/Adam optimizers.
//!
//! All reductions run in a fixed sequential order, so results never depend on
//! scheduling and a seeded run is bit-reproducible.

mod matrix;
mod mlp;
mod optim;

pub use matrix::Matrix;
pub use mlp::{Activation, Dense, DenseGrad, ForwardCache, Gradients, Mlp, LEAKY_SLOPE};
pub use optim::{OptimizerConfig, OptimizerState};
