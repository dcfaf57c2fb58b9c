//! Maps from current-trial coefficients to the marginal treatment effect a
//! historical study reports, together with their analytic Jacobians.
//!
//! The historical study is assumed to have biomarker prevalence `mu_x_hist`;
//! each mapping averages cell-level quantities over `X ~ Bernoulli(mu_x_hist)`.
//! Cells are indexed by `(t, x)` as in [`crate::model::cell_index`].

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{NppError, Result};
use crate::model::{cell_design_rows, cell_index, inv_logit, softplus, CoefficientVector};

/// Historical link / current link pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingKind {
    /// Mean difference reported for a Gaussian current model.
    IdentityIdentity,
    /// Marginal risk difference for a logistic current model.
    IdentityLogit,
    /// Marginal log odds ratio for a logistic current model.
    LogitLogit,
    /// Difference of expected conditional odds.
    LogLogit,
    /// Difference of expected inverse linear predictors.
    InverseLogit,
}

impl MappingKind {
    pub fn is_linear(self) -> bool {
        matches!(self, MappingKind::IdentityIdentity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingSpec {
    pub kind: MappingKind,
    pub mu_x_hist: f64,
}

const CELL_EPS: f64 = 1e-12;

impl MappingSpec {
    pub fn new(kind: MappingKind, mu_x_hist: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu_x_hist) {
            return Err(NppError::InvalidParameter(format!(
                "historical biomarker prevalence must lie in [0, 1], got {mu_x_hist}"
            )));
        }
        Ok(Self { kind, mu_x_hist })
    }

    /// The historical estimand implied by `beta`.
    pub fn evaluate(&self, beta: &Vector4<f64>) -> Result<f64> {
        self.evaluate_with_gradient(beta, false).map(|(h, _)| h)
    }

    /// Jacobian row of [`MappingSpec::evaluate`] with respect to
    /// `(beta0, beta1, beta2, beta3)`.
    pub fn gradient(&self, beta: &Vector4<f64>) -> Result<Vector4<f64>> {
        self.evaluate_with_gradient(beta, true).map(|(_, g)| g)
    }

    /// Mapping value and Jacobian row in one pass. The gradient is only
    /// computed when `want_grad` is set (zeros otherwise).
    pub fn evaluate_with_gradient(
        &self,
        beta: &Vector4<f64>,
        want_grad: bool,
    ) -> Result<(f64, Vector4<f64>)> {
        let mu = self.mu_x_hist;
        let rows = cell_design_rows();
        let eta = [
            rows[0].dot(beta),
            rows[1].dot(beta),
            rows[2].dot(beta),
            rows[3].dot(beta),
        ];
        // weight of biomarker level x in the historical population
        let w = [1.0 - mu, mu];
        let c = |t: u8, x: u8| cell_index(t, x);
        let mut grad = Vector4::zeros();
        let h = match self.kind {
            MappingKind::IdentityIdentity => {
                if want_grad {
                    grad = Vector4::new(0.0, 0.0, 1.0, mu);
                }
                beta[2] + mu * beta[3]
            }
            MappingKind::IdentityLogit => {
                let p = eta.map(inv_logit);
                let mut h = 0.0;
                for x in 0..2u8 {
                    h += w[x as usize] * (p[c(1, x)] - p[c(0, x)]);
                    if want_grad {
                        for t in 0..2u8 {
                            let k = c(t, x);
                            let sign = if t == 1 { 1.0 } else { -1.0 };
                            grad += rows[k] * (sign * w[x as usize] * p[k] * (1.0 - p[k]));
                        }
                    }
                }
                h
            }
            MappingKind::LogitLogit => {
                let p = eta.map(inv_logit);
                let marg = |t: u8| w[0] * p[c(t, 0)] + w[1] * p[c(t, 1)];
                let (p1, p0) = (marg(1), marg(0));
                for &m in &[p1, p0] {
                    if !(CELL_EPS..=1.0 - CELL_EPS).contains(&m) {
                        return Err(NppError::DegenerateMarginal { value: m });
                    }
                }
                if want_grad {
                    for t in 0..2u8 {
                        let pm = if t == 1 { p1 } else { p0 };
                        let sign = if t == 1 { 1.0 } else { -1.0 };
                        let mut dp = Vector4::zeros();
                        for x in 0..2u8 {
                            let k = c(t, x);
                            dp += rows[k] * (w[x as usize] * p[k] * (1.0 - p[k]));
                        }
                        grad += dp * (sign / (pm * (1.0 - pm)));
                    }
                }
                log_odds_of_mixture(mu, eta[c(1, 0)], eta[c(1, 1)])
                    - log_odds_of_mixture(mu, eta[c(0, 0)], eta[c(0, 1)])
            }
            MappingKind::LogLogit => {
                let e = eta.map(f64::exp);
                let mut h = 0.0;
                for x in 0..2u8 {
                    h += w[x as usize] * (e[c(1, x)] - e[c(0, x)]);
                    if want_grad {
                        grad += (rows[c(1, x)] * e[c(1, x)] - rows[c(0, x)] * e[c(0, x)])
                            * w[x as usize];
                    }
                }
                h
            }
            MappingKind::InverseLogit => {
                if let Some(&bad) = eta.iter().find(|e| e.abs() < CELL_EPS) {
                    return Err(NppError::SingularMapping { value: bad });
                }
                let mut h = 0.0;
                for x in 0..2u8 {
                    let (e1, e0) = (eta[c(1, x)], eta[c(0, x)]);
                    h += w[x as usize] * (1.0 / e1 - 1.0 / e0);
                    if want_grad {
                        grad += (rows[c(0, x)] / (e0 * e0) - rows[c(1, x)] / (e1 * e1))
                            * w[x as usize];
                    }
                }
                h
            }
        };
        Ok((h, grad))
    }

    /// Mapping value without the degeneracy checks, for Monte-Carlo sweeps
    /// over a wide prior. May return a non-finite value.
    pub fn evaluate_unchecked(&self, beta: &Vector4<f64>) -> f64 {
        match self.kind {
            MappingKind::LogitLogit => {
                let rows = cell_design_rows();
                let mu = self.mu_x_hist;
                let e = |k: usize| rows[k].dot(beta);
                log_odds_of_mixture(mu, e(cell_index(1, 0)), e(cell_index(1, 1)))
                    - log_odds_of_mixture(mu, e(cell_index(0, 0)), e(cell_index(0, 1)))
            }
            _ => self.evaluate(beta).unwrap_or(f64::NAN),
        }
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `logit((1-mu)*expit(eta0) + mu*expit(eta1))` evaluated in log space.
fn log_odds_of_mixture(mu: f64, eta0: f64, eta1: f64) -> f64 {
    let (lw0, lw1) = ((1.0 - mu).ln(), mu.ln());
    let log_p = log_add(lw0 - softplus(-eta0), lw1 - softplus(-eta1));
    let log_q = log_add(lw0 - softplus(eta0), lw1 - softplus(eta1));
    log_p - log_q
}

pub fn mapping_h(spec: &MappingSpec, beta: &CoefficientVector) -> Result<f64> {
    spec.evaluate(&beta.betas())
}

pub fn mapping_jacobian(spec: &MappingSpec, beta: &CoefficientVector) -> Result<Vector4<f64>> {
    spec.gradient(&beta.betas())
}
