//! Joint log posterior of the summary-anchored power prior over
//! `(beta, a_1..a_H, sigma)`.

use std::sync::Arc;

use nalgebra::Vector4;
use smallvec::SmallVec;

use super::normalizer::{ClosedFormNormalizer, LogCTable};
use super::prior::{BaselinePrior, InverseGamma};
use super::summary::{linearize_summary, BetaPrior, HistoricalSummary, LinearizedSummary};
use crate::error::{NppError, Result};
use crate::model::{mle_fit_stats, CellStats, CoefficientVector, MleFit, OutcomeFamily, TrialDataset};
use crate::sampler::{ParamLayout, PosteriorDensity};

/// Summary likelihood used inside the posterior.
#[derive(Debug, Clone, PartialEq)]
pub enum SummaryTerm {
    Exact(HistoricalSummary),
    Linearized(LinearizedSummary),
}

impl SummaryTerm {
    pub fn a_prior(&self) -> BetaPrior {
        match self {
            SummaryTerm::Exact(s) => s.a_prior(),
            SummaryTerm::Linearized(s) => s.a_prior(),
        }
    }

    /// Log summary likelihood and gradient; `-inf` where the mapping is
    /// undefined.
    fn log_likelihood_grad(&self, beta: &Vector4<f64>, grad: &mut Vector4<f64>) -> f64 {
        match self {
            SummaryTerm::Exact(s) => s.log_likelihood_grad(beta, grad).unwrap_or(f64::NEG_INFINITY),
            SummaryTerm::Linearized(s) => s.log_likelihood_grad(beta, grad),
        }
    }
}

/// Source of `log C(a)` during sampling.
#[derive(Debug, Clone)]
pub enum Normalizer {
    /// No summaries, nothing to normalize.
    None,
    ClosedForm(ClosedFormNormalizer),
    /// Interpolated table for a single borrowing weight.
    Grid(Arc<LogCTable>),
}

impl Normalizer {
    fn arity_matches(&self, h: usize) -> bool {
        match self {
            Normalizer::None => h == 0,
            Normalizer::ClosedForm(c) => c.len() == h,
            Normalizer::Grid(_) => h == 1,
        }
    }

    fn log_c_grad(&self, a: &[f64], grad: &mut [f64]) -> f64 {
        match self {
            Normalizer::None => 0.0,
            Normalizer::ClosedForm(c) => c.log_c_grad(a, Some(grad)).unwrap_or(f64::NAN),
            Normalizer::Grid(t) => match (t.interpolate(a[0]), t.slope(a[0])) {
                (Ok(v), Ok(s)) => {
                    grad[0] = s;
                    v
                }
                _ => f64::NAN,
            },
        }
    }
}

/// Treatment of the Gaussian residual scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaModel {
    /// Bernoulli family: no scale parameter.
    NotApplicable,
    /// `sigma^2 ~ IG(shape, scale)`, sampled as `sigma`.
    InverseGamma(InverseGamma),
    /// Known residual scale.
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct NppPosterior {
    family: OutcomeFamily,
    stats: CellStats,
    terms: Vec<SummaryTerm>,
    a_priors: Vec<BetaPrior>,
    normalizer: Normalizer,
    prior: BaselinePrior,
    sigma: SigmaModel,
    anchor: Option<MleFit>,
}

impl NppPosterior {
    pub fn new(
        family: OutcomeFamily,
        stats: CellStats,
        terms: Vec<SummaryTerm>,
        normalizer: Normalizer,
        prior: BaselinePrior,
        sigma: SigmaModel,
    ) -> Result<Self> {
        if !normalizer.arity_matches(terms.len()) {
            return Err(NppError::InvalidParameter(format!(
                "normalizer does not match {} summary term(s); a weight grid supports exactly one",
                terms.len()
            )));
        }
        match (family, sigma) {
            (OutcomeFamily::BernoulliLogit, SigmaModel::NotApplicable) => {}
            (OutcomeFamily::GaussianIdentity, SigmaModel::InverseGamma(_)) => {}
            (OutcomeFamily::GaussianIdentity, SigmaModel::Fixed(s)) if s > 0.0 => {}
            _ => {
                return Err(NppError::InvalidParameter(format!(
                    "sigma model {sigma:?} does not fit the {family:?} family"
                )))
            }
        }
        let a_priors = terms.iter().map(SummaryTerm::a_prior).collect();
        let anchor = mle_fit_stats(&stats, family).ok();
        Ok(Self {
            family,
            stats,
            terms,
            a_priors,
            normalizer,
            prior,
            sigma,
            anchor,
        })
    }

    /// Posterior for `data` borrowing from `summaries`.
    ///
    /// With `linearized`, each summary is expanded around the current-data
    /// MLE (zeros when the design is degenerate). The normalizer is the
    /// closed form unless a grid table is supplied; exact nonlinear
    /// summaries require the table.
    pub fn from_data(
        data: &TrialDataset,
        summaries: &[HistoricalSummary],
        prior: &BaselinePrior,
        linearized: bool,
        grid: Option<Arc<LogCTable>>,
    ) -> Result<Self> {
        let family = data.family();
        let stats = data.cell_stats();
        let sigma = match family {
            OutcomeFamily::BernoulliLogit => SigmaModel::NotApplicable,
            OutcomeFamily::GaussianIdentity => SigmaModel::InverseGamma(prior.sigma2()),
        };
        let anchor = mle_fit_stats(&stats, family)
            .map(|f| f.coefficients)
            .unwrap_or_else(|_| CoefficientVector::new(0.0, 0.0, 0.0, 0.0));

        let (terms, normalizer) = if summaries.is_empty() {
            (Vec::new(), Normalizer::None)
        } else {
            let all_linear = summaries.iter().all(HistoricalSummary::is_linear);
            let needs_lin = linearized || (all_linear && grid.is_none());
            let lin = if needs_lin {
                summaries
                    .iter()
                    .map(|s| linearize_summary(s, &anchor))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let normalizer = match grid {
                Some(t) => Normalizer::Grid(t),
                None if needs_lin => Normalizer::ClosedForm(ClosedFormNormalizer::new(&lin, prior)?),
                None => {
                    return Err(NppError::InvalidParameter(
                        "exact nonlinear summaries need a Monte-Carlo weight grid".into(),
                    ))
                }
            };
            let terms = if linearized {
                lin.into_iter().map(SummaryTerm::Linearized).collect()
            } else {
                summaries.iter().cloned().map(SummaryTerm::Exact).collect()
            };
            (terms, normalizer)
        };
        Self::new(family, stats, terms, normalizer, prior.clone(), sigma)
    }

    pub fn with_fixed_sigma(mut self, sigma: f64) -> Result<Self> {
        if self.family != OutcomeFamily::GaussianIdentity || !(sigma > 0.0) {
            return Err(NppError::InvalidParameter("fixed sigma needs the Gaussian family and sigma > 0".into()));
        }
        self.sigma = SigmaModel::Fixed(sigma);
        Ok(self)
    }

    pub fn n_weights(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[SummaryTerm] {
        &self.terms
    }

    pub fn anchor(&self) -> Option<&MleFit> {
        self.anchor.as_ref()
    }

    /// Default starting point: MLE coefficients, prior-mean weights and the
    /// residual-scale estimate.
    pub fn initial_point(&self) -> Vec<f64> {
        let fit = self
            .anchor
            .map(|f| f.coefficients)
            .unwrap_or_else(|| CoefficientVector::new(0.0, 0.0, 0.0, 0.0));
        let mut theta: Vec<f64> = fit.betas().iter().copied().collect();
        theta.extend(self.a_priors.iter().map(BetaPrior::mean));
        if let SigmaModel::InverseGamma(_) = self.sigma {
            let s = if fit.sigma.is_finite() && fit.sigma > 0.0 { fit.sigma } else { 1.0 };
            theta.push(s);
        }
        theta
    }

    /// Log density at `(beta, a, sigma)` with gradient; the point is packed
    /// as in [`PosteriorDensity::layout`]. Non-finite outside the support.
    pub fn log_joint_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let h = self.terms.len();
        let beta = Vector4::new(theta[0], theta[1], theta[2], theta[3]);
        let a = &theta[4..4 + h];
        let sigma = match self.sigma {
            SigmaModel::NotApplicable => 1.0,
            SigmaModel::Fixed(s) => s,
            SigmaModel::InverseGamma(_) => theta[4 + h],
        };
        if a.iter().any(|w| !(0.0..=1.0).contains(w)) || !(sigma > 0.0) {
            return f64::NEG_INFINITY;
        }

        let mut g_beta = Vector4::zeros();
        let (mut value, d_sigma) = self.stats.loglik_grad(self.family, &beta, sigma, &mut g_beta);
        let mut g_tmp = Vector4::zeros();
        value += self.prior.log_density_grad(&beta, &mut g_tmp);
        g_beta += g_tmp;

        let mut d_logc: SmallVec<[f64; 4]> = SmallVec::from_elem(0.0, h);
        value -= self.normalizer.log_c_grad(a, &mut d_logc);
        for (k, (term, &w)) in self.terms.iter().zip(a).enumerate() {
            let ll = term.log_likelihood_grad(&beta, &mut g_tmp);
            if w != 0.0 {
                value += w * ll;
                g_beta += g_tmp * w;
            }
            let bp = self.a_priors[k];
            value += bp.log_density(w);
            grad[4 + k] = ll + bp.d_log_density(w) - d_logc[k];
        }
        grad[..4].copy_from_slice(g_beta.as_slice());
        if let SigmaModel::InverseGamma(ig) = self.sigma {
            value += ig.log_density_sigma(sigma);
            grad[4 + h] = d_sigma + ig.d_log_density_sigma(sigma);
        }
        value
    }

    pub fn log_joint(&self, theta: &[f64]) -> f64 {
        let mut g = vec![0.0; self.layout().dim()];
        self.log_joint_grad(theta, &mut g)
    }
}

impl PosteriorDensity for NppPosterior {
    fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_weights: self.terms.len(),
            has_sigma: matches!(self.sigma, SigmaModel::InverseGamma(_)),
        }
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        self.log_joint_grad(theta, grad)
    }
}

/// Log joint posterior density (up to a global constant) at a single point.
pub fn log_joint_posterior(
    beta: &CoefficientVector,
    a_weights: &[f64],
    data: &TrialDataset,
    terms: &[SummaryTerm],
    prior: &BaselinePrior,
    normalizer: &Normalizer,
) -> Result<f64> {
    if a_weights.len() != terms.len() {
        return Err(NppError::InvalidParameter("one borrowing weight per summary is required".into()));
    }
    beta.validate(data.family())?;
    let sigma = match data.family() {
        OutcomeFamily::BernoulliLogit => SigmaModel::NotApplicable,
        OutcomeFamily::GaussianIdentity => SigmaModel::InverseGamma(prior.sigma2()),
    };
    let post = NppPosterior::new(
        data.family(),
        data.cell_stats(),
        terms.to_vec(),
        normalizer.clone(),
        prior.clone(),
        sigma,
    )?;
    let mut theta: Vec<f64> = beta.betas().iter().copied().collect();
    theta.extend_from_slice(a_weights);
    if data.family() == OutcomeFamily::GaussianIdentity {
        theta.push(beta.sigma);
    }
    Ok(post.log_joint(&theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::borrowing::mapping::{MappingKind, MappingSpec};
    use crate::borrowing::summary::make_historical_summary;
    use crate::model::{generate_outcome, sample_subject, Subject};
    use crate::rng::stream;

    fn data(family: OutcomeFamily, n: usize, seed: u64) -> TrialDataset {
        let truth = CoefficientVector::new(-0.2, 0.4, 0.3, 0.65);
        let mut rng = stream(seed, &[]);
        let mut d = TrialDataset::empty(family);
        for i in 0..n {
            let (x, t) = sample_subject(0.5, 0.5, None, &mut rng).unwrap();
            let y = generate_outcome(family, &truth, x, t, &mut rng);
            d.push(Subject { x, t, y, enroll_index: i }).unwrap();
        }
        d
    }

    fn summary(eta: f64, nu: f64) -> HistoricalSummary {
        let spec = MappingSpec::new(MappingKind::LogitLogit, 0.5).unwrap();
        let truth = CoefficientVector::new(-0.2, 0.4, 0.0, 0.0);
        make_historical_summary(&truth, spec, 0.2, 500, 500, BetaPrior::new(eta, nu).unwrap()).unwrap()
    }

    #[test]
    fn zero_weight_reduces_to_no_borrowing() {
        let d = data(OutcomeFamily::BernoulliLogit, 200, 1);
        let prior = BaselinePrior::isotropic(5.0).unwrap();
        let none = NppPosterior::from_data(&d, &[], &prior, true, None).unwrap();
        let with = NppPosterior::from_data(&d, &[summary(1.0, 1.0)], &prior, true, None).unwrap();
        for b in [[0.1, -0.3, 0.2, 0.5], [-1.0, 0.7, 0.0, -0.4]] {
            let mut t = b.to_vec();
            let base = none.log_joint(&t);
            t.push(0.0);
            assert_eq!(with.log_joint(&t), base);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let prior = BaselinePrior::isotropic(5.0).unwrap();
        let d = data(OutcomeFamily::BernoulliLogit, 300, 2);
        let s = summary(4.0, 1.0);
        let spec = MappingSpec::new(MappingKind::IdentityIdentity, 0.5).unwrap();
        let lin = HistoricalSummary::scalar(0.2, 0.05, spec, BetaPrior::new(2.0, 3.0).unwrap()).unwrap();
        let g = data(OutcomeFamily::GaussianIdentity, 120, 3);
        let cases = [
            (NppPosterior::from_data(&d, std::slice::from_ref(&s), &prior, true, None).unwrap(), vec![0.1, 0.2, 0.1, 0.4, 0.6]),
            (
                NppPosterior::from_data(&g, &[lin.clone(), lin], &prior, false, None).unwrap(),
                vec![0.1, 0.2, 0.1, 0.4, 0.3, 0.7, 1.3],
            ),
        ];
        for (post, theta) in cases {
            let mut grad = vec![0.0; theta.len()];
            post.log_joint_grad(&theta, &mut grad);
            for k in 0..theta.len() {
                let (mut up, mut dn) = (theta.clone(), theta.clone());
                up[k] += 1e-6;
                dn[k] -= 1e-6;
                let fd = (post.log_joint(&up) - post.log_joint(&dn)) / 2e-6;
                assert!((fd - grad[k]).abs() < 1e-5 * fd.abs().max(1.0), "k={k}: {fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn exact_nonlinear_needs_grid() {
        let prior = BaselinePrior::isotropic(5.0).unwrap();
        let d = data(OutcomeFamily::BernoulliLogit, 100, 4);
        assert!(NppPosterior::from_data(&d, &[summary(4.0, 1.0)], &prior, false, None).is_err());
        let table = Arc::new(LogCTable::new(vec![0.0, 1.0], vec![0.0, -1.0]).unwrap());
        let two = [summary(4.0, 1.0), summary(4.0, 1.0)];
        assert!(NppPosterior::from_data(&d, &two, &prior, false, Some(table.clone())).is_err());
        let post = NppPosterior::from_data(&d, &two[..1], &prior, false, Some(table)).unwrap();
        assert_eq!(post.initial_point()[4], 0.8);
    }

    #[test]
    fn free_function_agrees() {
        let prior = BaselinePrior::isotropic(5.0).unwrap();
        let d = data(OutcomeFamily::GaussianIdentity, 80, 5);
        let beta = CoefficientVector::new(0.1, 0.0, 0.3, -0.2).with_sigma(0.9);
        let v = log_joint_posterior(&beta, &[], &d, &[], &prior, &Normalizer::None).unwrap();
        let post = NppPosterior::from_data(&d, &[], &prior, true, None).unwrap();
        assert_eq!(v, post.log_joint(&[0.1, 0.0, 0.3, -0.2, 0.9]));
        assert!(post.log_joint(&[0.1, 0.0, 0.3, -0.2, -0.9]).is_infinite());
    }
}
