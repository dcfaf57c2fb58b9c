//! Historical summaries and their Gaussian summary likelihoods, exact and
//! linearized around an anchor.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use super::mapping::{MappingKind, MappingSpec};
use crate::error::{NppError, Result};
use crate::model::{cell_design_rows, cell_index, inv_logit, CoefficientVector};

/// `Beta(eta, nu)` hyperprior on a borrowing weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaPrior {
    pub eta: f64,
    pub nu: f64,
}

impl BetaPrior {
    pub fn new(eta: f64, nu: f64) -> Result<Self> {
        if !(eta > 0.0 && nu > 0.0 && eta.is_finite() && nu.is_finite()) {
            return Err(NppError::InvalidParameter(format!(
                "Beta hyperparameters must be positive, got ({eta}, {nu})"
            )));
        }
        Ok(Self { eta, nu })
    }

    pub fn mean(&self) -> f64 {
        self.eta / (self.eta + self.nu)
    }

    /// `(eta-1) log a + (nu-1) log(1-a)`; normalizing constant dropped.
    pub fn log_density(&self, a: f64) -> f64 {
        let mut lp = 0.0;
        if self.eta != 1.0 {
            lp += (self.eta - 1.0) * a.ln();
        }
        if self.nu != 1.0 {
            lp += (self.nu - 1.0) * (1.0 - a).ln();
        }
        lp
    }

    pub fn d_log_density(&self, a: f64) -> f64 {
        let mut d = 0.0;
        if self.eta != 1.0 {
            d += (self.eta - 1.0) / a;
        }
        if self.nu != 1.0 {
            d -= (self.nu - 1.0) / (1.0 - a);
        }
        d
    }
}

/// One external study's reported effect estimate(s).
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalSummary {
    m_delta: DVector<f64>,
    sigma_delta: DMatrix<f64>,
    precision: DMatrix<f64>,
    mappings: Vec<MappingSpec>,
    a_prior: BetaPrior,
}

impl HistoricalSummary {
    pub fn new(
        m_delta: DVector<f64>,
        sigma_delta: DMatrix<f64>,
        mappings: Vec<MappingSpec>,
        a_prior: BetaPrior,
    ) -> Result<Self> {
        let k = m_delta.len();
        if k == 0 {
            return Err(NppError::InvalidParameter("summary has no components".into()));
        }
        if sigma_delta.shape() != (k, k) || mappings.len() != k {
            return Err(NppError::InvalidParameter(format!(
                "summary dimension mismatch: estimate {k}, covariance {:?}, mappings {}",
                sigma_delta.shape(),
                mappings.len()
            )));
        }
        if !m_delta.iter().all(|v| v.is_finite()) {
            return Err(NppError::InvalidParameter("summary estimate must be finite".into()));
        }
        if (&sigma_delta - sigma_delta.transpose()).abs().max() > 1e-12 * sigma_delta.abs().max() {
            return Err(NppError::InvalidParameter("summary covariance is not symmetric".into()));
        }
        let chol = sigma_delta.clone().cholesky().ok_or_else(|| {
            NppError::InvalidParameter("summary covariance is not positive definite".into())
        })?;
        let precision = chol.inverse();
        Ok(Self {
            m_delta,
            sigma_delta,
            precision,
            mappings,
            a_prior,
        })
    }

    /// A one-component summary with variance `variance`.
    pub fn scalar(estimate: f64, variance: f64, mapping: MappingSpec, a_prior: BetaPrior) -> Result<Self> {
        Self::new(
            DVector::from_element(1, estimate),
            DMatrix::from_element(1, 1, variance),
            vec![mapping],
            a_prior,
        )
    }

    pub fn m_delta(&self) -> &DVector<f64> {
        &self.m_delta
    }

    pub fn sigma_delta(&self) -> &DMatrix<f64> {
        &self.sigma_delta
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn mappings(&self) -> &[MappingSpec] {
        &self.mappings
    }

    pub fn a_prior(&self) -> BetaPrior {
        self.a_prior
    }

    pub fn dim(&self) -> usize {
        self.m_delta.len()
    }

    pub fn is_linear(&self) -> bool {
        self.mappings.iter().all(|m| m.kind.is_linear())
    }

    pub fn mapping_h(&self, beta: &Vector4<f64>) -> Result<DVector<f64>> {
        let values: Result<Vec<f64>> = self.mappings.iter().map(|m| m.evaluate(beta)).collect();
        Ok(DVector::from_vec(values?))
    }

    /// Jacobian of the stacked mapping, `dim x 4`.
    pub fn jacobian(&self, beta: &Vector4<f64>) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.dim(), 4);
        for (r, m) in self.mappings.iter().enumerate() {
            let g = m.gradient(beta)?;
            for c in 0..4 {
                j[(r, c)] = g[c];
            }
        }
        Ok(j)
    }

    /// Exact log summary likelihood and its gradient in `beta`.
    pub fn log_likelihood_grad(&self, beta: &Vector4<f64>, grad: &mut Vector4<f64>) -> Result<f64> {
        let k = self.dim();
        let mut resid: SmallVec<[f64; 4]> = SmallVec::with_capacity(k);
        let mut rows: SmallVec<[Vector4<f64>; 4]> = SmallVec::with_capacity(k);
        for (m, target) in self.mappings.iter().zip(self.m_delta.iter()) {
            let (h, g) = m.evaluate_with_gradient(beta, true)?;
            resid.push(h - target);
            rows.push(g);
        }
        let mut quad = 0.0;
        *grad = Vector4::zeros();
        for i in 0..k {
            let mut pr = 0.0;
            for j in 0..k {
                pr += self.precision[(i, j)] * resid[j];
            }
            quad += resid[i] * pr;
            *grad -= rows[i] * pr;
        }
        Ok(-0.5 * quad)
    }

    pub fn log_likelihood(&self, beta: &Vector4<f64>) -> Result<f64> {
        let r = self.mapping_h(beta)? - &self.m_delta;
        Ok(-0.5 * (r.transpose() * &self.precision * &r)[(0, 0)])
    }

    /// Log likelihood with unchecked mapping evaluation; `-inf` where the
    /// mapping is not finite.
    pub(crate) fn log_likelihood_unchecked(&self, beta: &Vector4<f64>) -> f64 {
        let k = self.dim();
        let mut resid: SmallVec<[f64; 4]> = SmallVec::with_capacity(k);
        for (m, target) in self.mappings.iter().zip(self.m_delta.iter()) {
            let h = m.evaluate_unchecked(beta);
            if !h.is_finite() {
                return f64::NEG_INFINITY;
            }
            resid.push(h - target);
        }
        let mut quad = 0.0;
        for i in 0..k {
            for j in 0..k {
                quad += resid[i] * self.precision[(i, j)] * resid[j];
            }
        }
        -0.5 * quad
    }
}

pub fn log_summary_likelihood_exact(summary: &HistoricalSummary, beta: &CoefficientVector) -> Result<f64> {
    summary.log_likelihood(&beta.betas())
}

/// First-order Taylor expansion of a summary likelihood's mapping around
/// an anchor: `h(beta) ~ m_delta - m_adjusted + D beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSummary {
    pub d_matrix: DMatrix<f64>,
    pub m_adjusted: DVector<f64>,
    pub anchor: CoefficientVector,
    precision: DMatrix<f64>,
    a_prior: BetaPrior,
    // quadratic form coefficients: -1/2 (b'Ab - 2c'b + s)
    quad_a: Matrix4<f64>,
    quad_c: Vector4<f64>,
    quad_s: f64,
}

impl LinearizedSummary {
    /// Builds a linear working summary `D beta ~ N(m, V)` directly.
    pub fn from_parts(
        d_matrix: DMatrix<f64>,
        m_adjusted: DVector<f64>,
        sigma_delta: DMatrix<f64>,
        anchor: CoefficientVector,
        a_prior: BetaPrior,
    ) -> Result<Self> {
        let k = m_adjusted.len();
        if d_matrix.shape() != (k, 4) || sigma_delta.shape() != (k, k) {
            return Err(NppError::InvalidParameter(
                "contrast matrix must have 4 columns and one row per summary component".into(),
            ));
        }
        let precision = sigma_delta
            .cholesky()
            .ok_or_else(|| NppError::InvalidParameter("summary covariance is not positive definite".into()))?
            .inverse();
        Ok(Self::assemble(d_matrix, m_adjusted, precision, anchor, a_prior))
    }

    fn assemble(
        d_matrix: DMatrix<f64>,
        m_adjusted: DVector<f64>,
        precision: DMatrix<f64>,
        anchor: CoefficientVector,
        a_prior: BetaPrior,
    ) -> Self {
        let dt_p = d_matrix.transpose() * &precision;
        let a = &dt_p * &d_matrix;
        let c = &dt_p * &m_adjusted;
        let s = (m_adjusted.transpose() * &precision * &m_adjusted)[(0, 0)];
        let quad_a = Matrix4::from_fn(|i, j| a[(i, j)]);
        let quad_c = Vector4::from_fn(|i, _| c[i]);
        Self {
            d_matrix,
            m_adjusted,
            anchor,
            precision,
            a_prior,
            quad_a,
            quad_c,
            quad_s: s,
        }
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn a_prior(&self) -> BetaPrior {
        self.a_prior
    }

    pub fn dim(&self) -> usize {
        self.m_adjusted.len()
    }

    pub fn log_likelihood_grad(&self, beta: &Vector4<f64>, grad: &mut Vector4<f64>) -> f64 {
        let ab = self.quad_a * beta;
        *grad = self.quad_c - ab;
        -0.5 * (beta.dot(&ab) - 2.0 * self.quad_c.dot(beta) + self.quad_s)
    }

    pub fn log_likelihood(&self, beta: &Vector4<f64>) -> f64 {
        let r = &self.d_matrix * DVector::from_column_slice(beta.as_slice()) - &self.m_adjusted;
        -0.5 * (r.transpose() * &self.precision * &r)[(0, 0)]
    }
}

pub fn linearize_summary(summary: &HistoricalSummary, anchor: &CoefficientVector) -> Result<LinearizedSummary> {
    let b = anchor.betas();
    let d = summary.jacobian(&b)?;
    let h = summary.mapping_h(&b)?;
    let m_adjusted = summary.m_delta() - h + &d * DVector::from_column_slice(b.as_slice());
    Ok(LinearizedSummary::assemble(
        d,
        m_adjusted,
        summary.precision().clone(),
        *anchor,
        summary.a_prior(),
    ))
}

/// Delta-method variance of a log odds ratio from two arms.
pub fn delta_method_variance(n_t: u32, n_c: u32, p1: f64, p0: f64) -> f64 {
    1.0 / (n_t as f64 * p1 * (1.0 - p1)) + 1.0 / (n_c as f64 * p0 * (1.0 - p0))
}

/// Marginal risks `(P1, P0)` implied by `beta` in a population with
/// biomarker prevalence `mu`.
pub fn marginal_risks(beta: &Vector4<f64>, mu: f64) -> (f64, f64) {
    let rows = cell_design_rows();
    let p = |t: u8, x: u8| inv_logit(rows[cell_index(t, x)].dot(beta));
    (
        (1.0 - mu) * p(1, 0) + mu * p(1, 1),
        (1.0 - mu) * p(0, 0) + mu * p(0, 1),
    )
}

/// Builds the summary a hypothetical historical study of `n_t` treated and
/// `n_c` control participants would report, shifted by `delta_bias`.
pub fn make_historical_summary(
    beta_true: &CoefficientVector,
    spec: MappingSpec,
    delta_bias: f64,
    n_t: u32,
    n_c: u32,
    a_prior: BetaPrior,
) -> Result<HistoricalSummary> {
    if n_t == 0 || n_c == 0 {
        return Err(NppError::InvalidParameter(
            "historical arm sizes must be positive; n_t = 0 means no borrowing".into(),
        ));
    }
    let b = beta_true.betas();
    let estimate = spec.evaluate(&b)? + delta_bias;
    let variance = match spec.kind {
        MappingKind::LogitLogit => {
            let (p1, p0) = marginal_risks(&b, spec.mu_x_hist);
            delta_method_variance(n_t, n_c, p1, p0)
        }
        MappingKind::IdentityLogit => {
            let (p1, p0) = marginal_risks(&b, spec.mu_x_hist);
            p1 * (1.0 - p1) / n_t as f64 + p0 * (1.0 - p0) / n_c as f64
        }
        MappingKind::IdentityIdentity => {
            beta_true.sigma * beta_true.sigma * (1.0 / n_t as f64 + 1.0 / n_c as f64)
        }
        MappingKind::LogLogit | MappingKind::InverseLogit => {
            return Err(NppError::InvalidParameter(format!(
                "no variance rule for generated {:?} summaries; supply the reported variance",
                spec.kind
            )))
        }
    };
    HistoricalSummary::scalar(estimate, variance, spec, a_prior)
}
