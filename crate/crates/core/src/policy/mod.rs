//! Policy networks and the distributional primitives they are trained with.

mod checkpoint;
mod dist;
mod kl;
mod layers;
mod network;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use dist::{epsilon_floor, kl_categorical, tv_categorical, CategoricalDist};
pub use kl::{kl_log_uniform, kl_log_uniform_approx, kl_log_uniform_mc, kl_oracle_table, KlOracleRow, ORACLE_ANCHOR};
pub use layers::{
    apply_prune_mask, gate_forward, prune_mask, vdo_forward, ForwardMode, GateLayer, Linear,
    LinearVars, LstmCell, LstmState, LstmVarState, LstmVars, GATE_INIT, GATE_SHARPNESS,
    INIT_LOG_SIGMA2, PRUNE_THRESHOLD,
};
pub use network::{policy_forward, BoundPolicy, PolicyArch, PolicyParams, StepVars};
