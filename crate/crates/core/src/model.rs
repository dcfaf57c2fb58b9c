//! Current-trial regression model.
//!
//! The linear predictor is `beta0 + beta1*x + beta2*t + beta3*t*x` for a
//! binary biomarker `x` and a binary treatment indicator `t`. Because both
//! covariates are binary, every likelihood in the engine is evaluated from
//! per-cell sufficient statistics ([`CellStats`]) rather than per subject.

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NppError, Result};

/// Biomarker levels supported by the engine.
pub const BIOMARKER_LEVELS: [u8; 2] = [0, 1];

/// Regression coefficients of the current trial, plus the residual scale
/// used by the Gaussian family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    1.0
}

impl CoefficientVector {
    pub fn new(beta0: f64, beta1: f64, beta2: f64, beta3: f64) -> Self {
        Self {
            beta0,
            beta1,
            beta2,
            beta3,
            sigma: 1.0,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn from_betas(betas: &Vector4<f64>, sigma: f64) -> Self {
        Self {
            beta0: betas[0],
            beta1: betas[1],
            beta2: betas[2],
            beta3: betas[3],
            sigma,
        }
    }

    pub fn betas(&self) -> Vector4<f64> {
        Vector4::new(self.beta0, self.beta1, self.beta2, self.beta3)
    }

    pub fn validate(&self, family: OutcomeFamily) -> Result<()> {
        if !self.betas().iter().all(|b| b.is_finite()) {
            return Err(NppError::InvalidParameter(
                "regression coefficients must be finite".into(),
            ));
        }
        if family == OutcomeFamily::GaussianIdentity && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(NppError::InvalidParameter(format!(
                "sigma must be positive for the Gaussian family, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Outcome distribution. The link is implied: identity for Gaussian
/// outcomes and logit for Bernoulli outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeFamily {
    GaussianIdentity,
    BernoulliLogit,
}

/// A set of biomarker levels, kept sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct BiomarkerSet(Vec<u8>);

impl BiomarkerSet {
    pub fn new(levels: impl IntoIterator<Item = u8>) -> Result<Self> {
        let mut levels: Vec<u8> = levels.into_iter().collect();
        if let Some(&bad) = levels.iter().find(|&&x| x > 1) {
            return Err(NppError::InvalidParameter(format!(
                "biomarker level {bad} is not in {{0, 1}}"
            )));
        }
        levels.sort_unstable();
        levels.dedup();
        Ok(Self(levels))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn full() -> Self {
        Self(BIOMARKER_LEVELS.to_vec())
    }

    pub fn single(level: u8) -> Self {
        Self::new([level]).expect("level must be 0 or 1")
    }

    pub fn contains(&self, level: u8) -> bool {
        self.0.contains(&level)
    }

    pub fn levels(&self) -> &[u8] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_subset(&self, other: &BiomarkerSet) -> bool {
        self.0.iter().all(|x| other.contains(*x))
    }
}

impl TryFrom<Vec<u8>> for BiomarkerSet {
    type Error = NppError;

    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BiomarkerSet> for Vec<u8> {
    fn from(s: BiomarkerSet) -> Self {
        s.0
    }
}

impl std::fmt::Display for BiomarkerSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// One enrolled participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub x: u8,
    pub t: u8,
    pub y: f64,
    pub enroll_index: usize,
}

/// Subjects in enrollment order, together with their outcome family.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    family: OutcomeFamily,
    subjects: Vec<Subject>,
}

impl TrialDataset {
    pub fn empty(family: OutcomeFamily) -> Self {
        Self {
            family,
            subjects: Vec::new(),
        }
    }

    /// Builds a dataset, validating every subject and the enrollment order.
    pub fn new(family: OutcomeFamily, subjects: Vec<Subject>) -> Result<Self> {
        let mut data = Self::empty(family);
        for s in subjects {
            data.push(s)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, subject: Subject) -> Result<()> {
        if subject.x > 1 || subject.t > 1 {
            return Err(NppError::InvalidParameter(format!(
                "subject {}: x and t must be binary",
                subject.enroll_index
            )));
        }
        if !subject.y.is_finite() {
            return Err(NppError::InvalidParameter(format!(
                "subject {}: outcome must be finite",
                subject.enroll_index
            )));
        }
        if self.family == OutcomeFamily::BernoulliLogit && subject.y != 0.0 && subject.y != 1.0 {
            return Err(NppError::InvalidParameter(format!(
                "subject {}: Bernoulli outcome must be 0 or 1, got {}",
                subject.enroll_index, subject.y
            )));
        }
        if let Some(last) = self.subjects.last() {
            if subject.enroll_index <= last.enroll_index {
                return Err(NppError::InvalidParameter(format!(
                    "enroll_index {} is not after {}",
                    subject.enroll_index, last.enroll_index
                )));
            }
        }
        self.subjects.push(subject);
        Ok(())
    }

    pub fn family(&self) -> OutcomeFamily {
        self.family
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// The first `n` enrolled subjects.
    pub fn prefix(&self, n: usize) -> TrialDataset {
        TrialDataset {
            family: self.family,
            subjects: self.subjects[..n.min(self.subjects.len())].to_vec(),
        }
    }

    pub fn cell_stats(&self) -> CellStats {
        CellStats::from_subjects(&self.subjects)
    }
}

/// Index of the `(t, x)` cell; cells are ordered 00, 01, 10, 11 by `(t, x)`.
#[inline]
pub fn cell_index(t: u8, x: u8) -> usize {
    2 * t as usize + x as usize
}

/// Design row `(1, x, t, t*x)` of a cell.
#[inline]
pub fn design_row(x: u8, t: u8) -> Vector4<f64> {
    let (xf, tf) = (x as f64, t as f64);
    Vector4::new(1.0, xf, tf, tf * xf)
}

/// Design rows indexed by [`cell_index`].
pub fn cell_design_rows() -> [Vector4<f64>; 4] {
    [design_row(0, 0), design_row(1, 0), design_row(0, 1), design_row(1, 1)]
}

/// Sufficient statistics of one `(t, x)` cell: count, mean outcome and the
/// centered sum of squares.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Cell {
    pub n: f64,
    pub mean: f64,
    pub ss: f64,
}

impl Cell {
    fn push(&mut self, y: f64) {
        self.n += 1.0;
        let d = y - self.mean;
        self.mean += d / self.n;
        self.ss += d * (y - self.mean);
    }

    /// Sum of outcomes (number of successes for Bernoulli data).
    pub fn sum(&self) -> f64 {
        self.n * self.mean
    }
}

/// Per-cell sufficient statistics of a dataset, indexed by [`cell_index`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellStats {
    pub cells: [Cell; 4],
}

impl CellStats {
    pub fn from_subjects(subjects: &[Subject]) -> Self {
        let mut stats = Self::default();
        for s in subjects {
            stats.cells[cell_index(s.t, s.x)].push(s.y);
        }
        stats
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().map(|c| c.n).sum()
    }

    /// Log-likelihood and its gradient with respect to `beta` (and `sigma`
    /// for the Gaussian family; the sigma derivative is 0 otherwise).
    pub fn loglik_grad(
        &self,
        family: OutcomeFamily,
        beta: &Vector4<f64>,
        sigma: f64,
        grad_beta: &mut Vector4<f64>,
    ) -> (f64, f64) {
        let rows = cell_design_rows();
        let mut ll = 0.0;
        let mut d_sigma = 0.0;
        *grad_beta = Vector4::zeros();
        match family {
            OutcomeFamily::BernoulliLogit => {
                for (cell, v) in self.cells.iter().zip(rows.iter()) {
                    if cell.n == 0.0 {
                        continue;
                    }
                    let eta = v.dot(beta);
                    let s = cell.sum();
                    // s*log p + (n-s)*log(1-p) = s*eta - n*softplus(eta)
                    ll += s * eta - cell.n * softplus(eta);
                    *grad_beta += v * (s - cell.n * inv_logit(eta));
                }
            }
            OutcomeFamily::GaussianIdentity => {
                let var = sigma * sigma;
                let mut n_total = 0.0;
                let mut rss = 0.0;
                for (cell, v) in self.cells.iter().zip(rows.iter()) {
                    if cell.n == 0.0 {
                        continue;
                    }
                    let eta = v.dot(beta);
                    let dev = cell.mean - eta;
                    rss += cell.ss + cell.n * dev * dev;
                    n_total += cell.n;
                    *grad_beta += v * (cell.n * dev / var);
                }
                ll = -0.5 * n_total * (2.0 * std::f64::consts::PI).ln()
                    - n_total * sigma.ln()
                    - rss / (2.0 * var);
                d_sigma = -n_total / sigma + rss / (var * sigma);
            }
        }
        (ll, d_sigma)
    }

    pub fn loglik(&self, family: OutcomeFamily, beta: &Vector4<f64>, sigma: f64) -> f64 {
        let mut g = Vector4::zeros();
        self.loglik_grad(family, beta, sigma, &mut g).0
    }
}

#[inline]
pub fn inv_logit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn linear_predictor(beta: &CoefficientVector, x: u8, t: u8) -> f64 {
    let (xf, tf) = (x as f64, t as f64);
    beta.beta0 + beta.beta1 * xf + beta.beta2 * tf + beta.beta3 * tf * xf
}

/// Conditional treatment effect at biomarker level `x`.
pub fn blip(beta: &CoefficientVector, x: u8) -> f64 {
    beta.beta2 + beta.beta3 * x as f64
}

pub fn generate_outcome<R: Rng + ?Sized>(
    family: OutcomeFamily,
    beta: &CoefficientVector,
    x: u8,
    t: u8,
    rng: &mut R,
) -> f64 {
    let eta = linear_predictor(beta, x, t);
    match family {
        OutcomeFamily::GaussianIdentity => {
            let z: f64 = rng.sample(StandardNormal);
            eta + beta.sigma * z
        }
        OutcomeFamily::BernoulliLogit => {
            if rng.random::<f64>() < inv_logit(eta) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Draws `(x, t)` for a new participant. When `restriction` is given, the
/// biomarker is drawn from its prevalence distribution renormalized over the
/// allowed levels.
pub fn sample_subject<R: Rng + ?Sized>(
    prevalence: f64,
    rand_ratio: f64,
    restriction: Option<&BiomarkerSet>,
    rng: &mut R,
) -> Result<(u8, u8)> {
    let x = match restriction {
        Some(set) if set.is_empty() => {
            return Err(NppError::InvalidParameter(
                "enrollment restriction excludes every biomarker level".into(),
            ))
        }
        Some(set) if set.levels().len() == 1 => set.levels()[0],
        _ => u8::from(rng.random::<f64>() < prevalence),
    };
    let t = u8::from(rng.random::<f64>() < rand_ratio);
    Ok((x, t))
}

/// Sum of per-subject log densities at `beta`.
pub fn loglik_current(data: &TrialDataset, beta: &CoefficientVector) -> f64 {
    let sigma = beta.sigma;
    if data.family() == OutcomeFamily::GaussianIdentity && !(sigma > 0.0) {
        return f64::NAN;
    }
    data.cell_stats().loglik(data.family(), &beta.betas(), sigma)
}

/// Gradient of [`loglik_current`] with respect to `(beta0..beta3)`.
pub fn loglik_gradient(data: &TrialDataset, beta: &CoefficientVector) -> Vector4<f64> {
    let mut g = Vector4::zeros();
    data.cell_stats()
        .loglik_grad(data.family(), &beta.betas(), beta.sigma, &mut g);
    g
}

/// Maximum-likelihood fit of the current-trial model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleFit {
    pub coefficients: CoefficientVector,
    /// Separation was detected and the ridge-stabilized fit was used.
    pub stabilized: bool,
    pub iterations: usize,
}

const IRLS_TOL: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
const RIDGE_PENALTY: f64 = 1e-4;
// Coefficients beyond this magnitude on the logit scale mean IRLS is
// chasing a separated cell to infinity.
const SEPARATION_BOUND: f64 = 30.0;

pub fn mle_fit(data: &TrialDataset) -> Result<MleFit> {
    mle_fit_stats(&data.cell_stats(), data.family())
}

pub fn mle_fit_stats(stats: &CellStats, family: OutcomeFamily) -> Result<MleFit> {
    let rows = cell_design_rows();
    let mut gram = Matrix4::zeros();
    for (cell, v) in stats.cells.iter().zip(rows.iter()) {
        gram += v * v.transpose() * cell.n;
    }
    let n = stats.total();
    if n == 0.0 {
        return Err(NppError::DegenerateDesign("no subjects".into()));
    }
    let scaled = gram / n;
    let chol = scaled.cholesky().ok_or_else(|| {
        NppError::DegenerateDesign("design columns (1, x, t, tx) are collinear".into())
    })?;
    let l = chol.l();
    let min_diag = (0..4).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_diag * min_diag < 1e-12 {
        return Err(NppError::DegenerateDesign(
            "design columns (1, x, t, tx) are collinear".into(),
        ));
    }

    match family {
        OutcomeFamily::GaussianIdentity => {
            let mut rhs = Vector4::zeros();
            for (cell, v) in stats.cells.iter().zip(rows.iter()) {
                rhs += v * cell.sum();
            }
            let beta = chol.solve(&(rhs / n));
            let mut rss = 0.0;
            for (cell, v) in stats.cells.iter().zip(rows.iter()) {
                let dev = cell.mean - v.dot(&beta);
                rss += cell.ss + cell.n * dev * dev;
            }
            if n <= 4.0 {
                return Err(NppError::DegenerateDesign(
                    "need more than 4 subjects to estimate sigma".into(),
                ));
            }
            let sigma = (rss / (n - 4.0)).sqrt();
            Ok(MleFit {
                coefficients: CoefficientVector::from_betas(&beta, sigma),
                stabilized: false,
                iterations: 1,
            })
        }
        // the model is saturated in the four cells, so a cell with only
        // successes or only failures has no finite MLE
        OutcomeFamily::BernoulliLogit => match stats
            .cells
            .iter()
            .all(|c| c.sum() > 0.0 && c.sum() < c.n)
            .then(|| newton_logistic(stats, 0.0))
            .flatten()
        {
            Some((beta, iterations)) => Ok(MleFit {
                coefficients: CoefficientVector::from_betas(&beta, 1.0),
                stabilized: false,
                iterations,
            }),
            None => {
                let (beta, iterations) =
                    newton_logistic(stats, RIDGE_PENALTY).ok_or_else(|| {
                        NppError::DegenerateDesign("ridge-stabilized IRLS did not converge".into())
                    })?;
                Ok(MleFit {
                    coefficients: CoefficientVector::from_betas(&beta, 1.0),
                    stabilized: true,
                    iterations,
                })
            }
        },
    }
}

/// Newton/IRLS iterations for the (optionally L2-penalized) logistic
/// log-likelihood. Returns `None` when the iterations diverge.
fn newton_logistic(stats: &CellStats, penalty: f64) -> Option<(Vector4<f64>, usize)> {
    let rows = cell_design_rows();
    let mut beta = Vector4::zeros();
    let bound = if penalty > 0.0 { f64::INFINITY } else { SEPARATION_BOUND };
    for iter in 1..=IRLS_MAX_ITER {
        let mut grad = -beta * penalty;
        let mut info = Matrix4::identity() * penalty;
        for (cell, v) in stats.cells.iter().zip(rows.iter()) {
            if cell.n == 0.0 {
                continue;
            }
            let p = inv_logit(v.dot(&beta));
            grad += v * (cell.sum() - cell.n * p);
            info += v * v.transpose() * (cell.n * p * (1.0 - p));
        }
        if grad.norm() <= IRLS_TOL {
            return Some((beta, iter));
        }
        let step = info.cholesky()?.solve(&grad);
        beta += step;
        if !beta.iter().all(|b| b.is_finite() && b.abs() < bound) {
            return None;
        }
    }
    // The gradient can stall just above the tolerance from rounding on very
    // large samples; accept a converged step size instead.
    let mut grad = -beta * penalty;
    for (cell, v) in stats.cells.iter().zip(rows.iter()) {
        grad += v * (cell.sum() - cell.n * inv_logit(v.dot(&beta)));
    }
    if grad.norm() / stats.total().max(1.0) < 1e-10 {
        Some((beta, IRLS_MAX_ITER))
    } else {
        None
    }
}
