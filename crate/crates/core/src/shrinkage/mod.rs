//! Shrinkage estimators for clustered Gaussian parameters and Monte-Carlo
//! checks of their risk.

mod estimators;
mod model;
mod prior;
pub mod quadrature;
mod risk;

pub use estimators::{bayes_estimate, beta_posterior, james_stein, BetaPosterior, Estimator};
pub use model::{posterior_mean, sample_group, GroupModel, GroupSample};
pub use prior::{prior_beta_density, Construction, PriorKind};
pub use risk::{
    axis_mean, domination_sweep, mse_monte_carlo, sure_from_samples, sure_risk, DominationTable, RiskReport, Verdict,
    MIN_RISK_SAMPLES, MIN_SWEEP_SAMPLES,
};
