//! Numeric substrate: tensors, a reverse-mode tape, Adam, finite-difference
//! checks and seeded random streams.

mod adam;
mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, finite_diff_check_steps};
pub use rng::{derive_seed, RngStream};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{kl_from_log_alpha, log_alpha, sigmoid, LOG_ALPHA_MAX, LOG_ALPHA_MIN};
