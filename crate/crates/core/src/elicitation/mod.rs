//! Staged elicitation of a prior for the between-study SD.

pub mod chips;
pub mod fit;
pub mod prior;
pub mod scale;
pub mod session;

pub use chips::ChipAllocation;
pub use fit::{fit_ratio, FitDiagnostics, FittedRatioDistribution, RatioFamily};
pub use prior::{
    feedback_density, prior_band_probabilities, BandProbabilities, DensityFeedback,
    HeterogeneityPrior, PriorVariant, TurnerDefault,
};
pub use scale::{
    convert_scale, dichotomize_guidance, interpretation_table, ratio_to_tau, tau_to_ratio,
    Dichotomization, OutcomeScale, ScaleKind,
};
pub use session::{EffectModel, ElicitationSession, Endpoint, Judgment, Stage};
