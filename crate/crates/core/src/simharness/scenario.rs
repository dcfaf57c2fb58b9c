use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::borrowing::{
    make_historical_summary, BaselinePrior, BetaPrior, HistoricalSummary, MappingKind, MappingSpec,
    NormalizationMethod,
};
use crate::design::DesignConfig;
use crate::error::{NppError, Result};
use crate::model::{CoefficientVector, OutcomeFamily};
use crate::sampler::SamplerConfig;

/// Where a historical summary comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SummarySource {
    /// Estimate and covariance as published.
    Reported {
        estimate: Vec<f64>,
        covariance: Vec<Vec<f64>>,
        mappings: Vec<MappingSpec>,
        a_prior: BetaPrior,
    },
    /// Summary a historical study of the given size would report under the
    /// scenario truth, shifted by `delta_bias`. `n_t = 0` disables it.
    Generated {
        mapping: MappingKind,
        mu_x_hist: f64,
        delta_bias: f64,
        n_t: u32,
        /// Defaults to `n_t`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_c: Option<u32>,
        a_prior: BetaPrior,
    },
}

impl SummarySource {
    /// Materializes the summary; `None` for a disabled generator.
    pub fn build(&self, beta_true: &CoefficientVector) -> Result<Option<HistoricalSummary>> {
        match self {
            SummarySource::Reported {
                estimate,
                covariance,
                mappings,
                a_prior,
            } => {
                let k = estimate.len();
                if covariance.len() != k || covariance.iter().any(|r| r.len() != k) {
                    return Err(NppError::InvalidParameter(format!(
                        "reported covariance must be {k} x {k}"
                    )));
                }
                let cov = DMatrix::from_fn(k, k, |i, j| covariance[i][j]);
                for m in mappings {
                    MappingSpec::new(m.kind, m.mu_x_hist)?;
                }
                let a = BetaPrior::new(a_prior.eta, a_prior.nu)?;
                HistoricalSummary::new(DVector::from_vec(estimate.clone()), cov, mappings.clone(), a).map(Some)
            }
            SummarySource::Generated {
                mapping,
                mu_x_hist,
                delta_bias,
                n_t,
                n_c,
                a_prior,
            } => {
                if *n_t == 0 {
                    return Ok(None);
                }
                let spec = MappingSpec::new(*mapping, *mu_x_hist)?;
                let a = BetaPrior::new(a_prior.eta, a_prior.nu)?;
                make_historical_summary(beta_true, spec, *delta_bias, *n_t, n_c.unwrap_or(*n_t), a).map(Some)
            }
        }
    }
}

/// Everything needed to simulate one design configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    pub family: OutcomeFamily,
    pub beta_true: CoefficientVector,
    pub prevalence: f64,
    pub rand_ratio: f64,
    pub design: DesignConfig,
    pub prior: BaselinePrior,
    #[serde(default)]
    pub summaries: Vec<SummarySource>,
    pub normalization: NormalizationMethod,
    /// Taylor-linearized summary likelihoods with the closed-form
    /// normalizer, as opposed to exact mappings with a Monte-Carlo grid.
    pub linearized: bool,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub n_reps: usize,
    pub base_seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.beta_true.validate(self.family)?;
        for (name, p) in [("prevalence", self.prevalence), ("rand_ratio", self.rand_ratio)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(NppError::InvalidParameter(format!("{name} must lie in (0, 1), got {p}")));
            }
        }
        self.design.check()?;
        self.sampler.validate()?;
        self.normalization.validate()?;
        match (&self.normalization, self.linearized) {
            (NormalizationMethod::ClosedFormLinearized, true) | (NormalizationMethod::MonteCarloGrid { .. }, false) => {}
            (NormalizationMethod::ClosedFormLinearized, false) => {
                return Err(NppError::InvalidParameter(
                    "linearized = false requires a Monte-Carlo grid normalization".into(),
                ))
            }
            (NormalizationMethod::MonteCarloGrid { .. }, true) => {
                return Err(NppError::InvalidParameter(
                    "the linearized implementation uses the closed-form normalizer".into(),
                ))
            }
        }
        if self.n_reps == 0 {
            return Err(NppError::InvalidParameter("n_reps must be positive".into()));
        }
        Ok(())
    }

    /// Historical summaries in effect (disabled generators dropped).
    pub fn historical_summaries(&self) -> Result<Vec<HistoricalSummary>> {
        let mut out = Vec::new();
        for s in &self.summaries {
            if let Some(h) = s.build(&self.beta_true)? {
                out.push(h);
            }
        }
        Ok(out)
    }
}
