//! Summary-anchored normalized power prior.

pub mod mapping;
pub mod normalizer;
pub mod posterior;
pub mod prior;
pub mod summary;

pub use mapping::{mapping_h, mapping_jacobian, MappingKind, MappingSpec};
pub use normalizer::{
    logc_closed_form, logc_interpolate, logc_mc_grid, logc_mc_grid_with, ClosedFormNormalizer, LogCTable,
    NormalizationMethod, MIN_STABLE_ESS,
};
pub use posterior::{log_joint_posterior, Normalizer, NppPosterior, SigmaModel, SummaryTerm};
pub use prior::{BaselinePrior, InverseGamma};
pub use summary::{
    delta_method_variance, linearize_summary, log_summary_likelihood_exact, make_historical_summary,
    marginal_risks, BetaPrior, HistoricalSummary, LinearizedSummary,
};
