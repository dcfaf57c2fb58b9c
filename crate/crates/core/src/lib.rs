//! Bayesian adaptive enrichment trials with summary-anchored borrowing of
//! historical evidence through a normalized power prior.

// Negated comparisons deliberately treat NaN as out of range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }};
}

pub mod borrowing;
pub mod design;
pub mod error;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod simharness;

pub use borrowing::{
    BaselinePrior, BetaPrior, HistoricalSummary, InverseGamma, LinearizedSummary, LogCTable, MappingKind,
    MappingSpec, NormalizationMethod, NppPosterior,
};
pub use error::{NppError, Result};
pub use model::{BiomarkerSet, CoefficientVector, OutcomeFamily, Subject, TrialDataset};
pub use sampler::{sample_posterior, Diagnostics, PosteriorDraws, SamplerConfig};
pub use design::{DesignConfig, Direction, InterimDecision, StopReason, TrialResult};
pub use simharness::{OperatingCharacteristics, ScenarioConfig, SummarySource};
