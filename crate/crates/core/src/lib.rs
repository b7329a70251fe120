//! Minimum-description-length control for multitask reinforcement learning.
//!
//! A control policy is KL-regularised toward a default policy whose weights
//! carry a variational-dropout posterior under a sparsity-inducing prior. The
//! crate bundles the pieces needed to train and study such agents at desk
//! scale:
//!
//! * [`autodiff`]: tensors, a reverse-mode tape, Adam, seeded streams.
//! * [`env`]: the FourRooms gridworld and its two-phase task schedules.
//! * [`policy`]: gated LSTM policies with optional variational layers.
//! * [`agents`]: A2C with the regularised objectives and the sequential loop.
//! * [`shrinkage`]: Monte-Carlo checks of the shrinkage-estimator theory.
//! * [`ftrl`]: a tabular simulator of the default policy as FTRL.
//! * [`checks`]: gradient and environment self-checks.

pub mod agents;
pub mod autodiff;
pub mod checks;
pub mod env;
pub mod error;
pub mod ftrl;
pub mod policy;
pub mod shrinkage;

pub use autodiff::{AdamConfig, AdamState, RngStream, Tape, Tensor, Var};
pub use error::{Error, Result};
