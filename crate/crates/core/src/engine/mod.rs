//! Bayesian network meta-analysis engine.

pub mod dataset;
pub mod deviance;
pub mod model;
pub mod sampler;
pub mod summary;

pub use dataset::{Arm, Likelihood, Study, TrialDataset};
pub use deviance::Dic;
pub use model::{McmcConfig, ModelConfig};
pub use sampler::{run_mcmc, run_mcmc_with_progress};
pub use summary::{posterior_tau_bands, ContrastSummary, Interval, PosteriorSummary, TauSummary, Traces};
