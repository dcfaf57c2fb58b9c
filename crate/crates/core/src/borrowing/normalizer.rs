//! Normalizing constant `C(a) = E_prior[ prod_h L_h(beta)^{a_h} ]` of the
//! power prior, in closed form for linear(ized) Gaussian summaries and by
//! Monte-Carlo integration on a grid of weights otherwise.
//!
//! The closed form works in whitened coordinates `beta = m0 + L z` with
//! `z ~ N(0, I)`. Writing `B_h = D_h L`, `r_h = m_h - D_h m0` and
//! `P_h = V_h^{-1}`, the integrand is Gaussian in `z` and
//!
//! ```text
//! log C(a) = -1/2 log det Q - 1/2 ( sum_h a_h r_h' P_h r_h - g' Q^{-1} g )
//! Q = I + sum_h a_h B_h' P_h B_h,   g = sum_h a_h B_h' P_h r_h
//! ```
//!
//! For a single summary this is
//! `-1/2 log|I + a S| - (a/2) r' (V + a D Sigma0 D')^{-1} r`: the weight
//! enters the exponent to the first power.

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::prior::BaselinePrior;
use super::summary::{HistoricalSummary, LinearizedSummary};
use crate::error::{NppError, Result};

/// How `log C(a)` is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormalizationMethod {
    ClosedFormLinearized,
    MonteCarloGrid { grid: Vec<f64>, mc_draws: usize },
}

impl NormalizationMethod {
    /// Equispaced grid with `nodes` points on `[0, 1]`.
    pub fn monte_carlo(nodes: usize, mc_draws: usize) -> Self {
        let grid = (0..nodes)
            .map(|i| if i + 1 == nodes { 1.0 } else { i as f64 / (nodes - 1) as f64 })
            .collect();
        NormalizationMethod::MonteCarloGrid { grid, mc_draws }
    }

    pub fn validate(&self) -> Result<()> {
        if let NormalizationMethod::MonteCarloGrid { grid, mc_draws } = self {
            validate_grid(grid)?;
            if *mc_draws == 0 {
                return Err(NppError::InvalidParameter("mc_draws must be positive".into()));
            }
        }
        Ok(())
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid[0] != 0.0 || *grid.last().unwrap() != 1.0 {
        return Err(NppError::InvalidParameter(
            "weight grid must start at 0 and end at 1".into(),
        ));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(NppError::InvalidParameter("weight grid must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct WhitenedTerm {
    k: Matrix4<f64>,
    g: Vector4<f64>,
    s: f64,
}

/// Closed-form `log C(a)` for a stack of linear Gaussian summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormNormalizer {
    terms: Vec<WhitenedTerm>,
}

impl ClosedFormNormalizer {
    pub fn new(linearized: &[LinearizedSummary], prior: &BaselinePrior) -> Result<Self> {
        let l = prior.cholesky_l();
        let m0 = prior.mean();
        let terms = linearized
            .iter()
            .map(|lin| {
                if lin.d_matrix.ncols() != 4 {
                    return Err(NppError::InvalidParameter(
                        "contrast matrix must have 4 columns".into(),
                    ));
                }
                let p = lin.precision();
                let b = &lin.d_matrix * l;
                let r = &lin.m_adjusted - &lin.d_matrix * nalgebra::DVector::from_column_slice(m0.as_slice());
                let bt_p = b.transpose() * p;
                let k = &bt_p * &b;
                let g = &bt_p * &r;
                let s = (r.transpose() * p * &r)[(0, 0)];
                Ok(WhitenedTerm {
                    k: Matrix4::from_fn(|i, j| k[(i, j)]),
                    g: Vector4::from_fn(|i, _| g[i]),
                    s,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { terms })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `log C(a)` and, when `grad` is given, its partial derivatives.
    pub fn log_c_grad(&self, a: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        if a.len() != self.terms.len() {
            return Err(NppError::InvalidParameter(format!(
                "expected {} borrowing weights, got {}",
                self.terms.len(),
                a.len()
            )));
        }
        let mut q = Matrix4::identity();
        let mut g = Vector4::zeros();
        let mut s = 0.0;
        for (t, &w) in self.terms.iter().zip(a) {
            q += t.k * w;
            g += t.g * w;
            s += t.s * w;
        }
        let chol = q
            .cholesky()
            .ok_or_else(|| NppError::NonPsdSystem(format!("combined precision at a = {a:?}")))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * (0..4).map(|i| l[(i, i)].ln()).sum::<f64>();
        let mu = chol.solve(&g);
        let log_c = -0.5 * log_det - 0.5 * (s - g.dot(&mu));
        if let Some(grad) = grad {
            let q_inv = chol.inverse();
            for (d, t) in grad.iter_mut().zip(&self.terms) {
                let trace = (q_inv * t.k).trace();
                let resid = mu.dot(&(t.k * mu)) - 2.0 * t.g.dot(&mu) + t.s;
                *d = -0.5 * trace - 0.5 * resid;
            }
        }
        Ok(log_c)
    }

    pub fn log_c(&self, a: &[f64]) -> Result<f64> {
        self.log_c_grad(a, None)
    }
}

pub fn logc_closed_form(
    a_weights: &[f64],
    linearized: &[LinearizedSummary],
    prior: &BaselinePrior,
) -> Result<f64> {
    if a_weights.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(NppError::InvalidParameter("borrowing weights must lie in [0, 1]".into()));
    }
    ClosedFormNormalizer::new(linearized, prior)?.log_c(a_weights)
}

/// `log C(a)` tabulated on a grid of a single (shared) borrowing weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LogCTable {
    grid: Vec<f64>,
    log_c: Vec<f64>,
    ess_at_one: Option<f64>,
}

/// Effective sample size of the importance weights at `a = 1` below which a
/// Monte-Carlo table is flagged as unstable.
pub const MIN_STABLE_ESS: f64 = 50.0;

impl LogCTable {
    pub fn new(grid: Vec<f64>, log_c: Vec<f64>) -> Result<Self> {
        validate_grid(&grid)?;
        if grid.len() != log_c.len() {
            return Err(NppError::InvalidParameter("grid and values differ in length".into()));
        }
        Ok(Self {
            grid,
            log_c,
            ess_at_one: None,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.log_c
    }

    pub fn ess_at_one(&self) -> Option<f64> {
        self.ess_at_one
    }

    pub fn is_unstable(&self) -> bool {
        self.ess_at_one.is_some_and(|e| e < MIN_STABLE_ESS)
    }

    fn segment(&self, a: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&a) {
            return Err(NppError::OutOfRange { value: a });
        }
        let i = self.grid.partition_point(|&g| g <= a);
        Ok(i.saturating_sub(1).min(self.grid.len() - 2))
    }

    /// Linear interpolation; exact at grid nodes.
    pub fn interpolate(&self, a: f64) -> Result<f64> {
        let i = self.segment(a)?;
        let (g0, g1) = (self.grid[i], self.grid[i + 1]);
        let (v0, v1) = (self.log_c[i], self.log_c[i + 1]);
        if a == g0 {
            return Ok(v0);
        }
        if a == g1 {
            return Ok(v1);
        }
        Ok(v0 + (a - g0) / (g1 - g0) * (v1 - v0))
    }

    /// Derivative of the interpolant (right-continuous at nodes).
    pub fn slope(&self, a: f64) -> Result<f64> {
        let i = self.segment(a)?;
        Ok((self.log_c[i + 1] - self.log_c[i]) / (self.grid[i + 1] - self.grid[i]))
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.grid.iter().copied().zip(self.log_c.iter().copied())
    }
}

pub fn logc_interpolate(table: &LogCTable, a: f64) -> Result<f64> {
    table.interpolate(a)
}

/// Monte-Carlo `log C(a)` on the method's grid for a weight shared by all
/// `summaries`, from `M` baseline-prior draws reused at every grid node.
pub fn logc_mc_grid<R: Rng + ?Sized>(
    summaries: &[HistoricalSummary],
    prior: &BaselinePrior,
    method: &NormalizationMethod,
    rng: &mut R,
) -> Result<LogCTable> {
    logc_mc_grid_with(
        |beta| summaries.iter().map(|s| s.log_likelihood_unchecked(beta)).sum(),
        prior,
        method,
        rng,
    )
}

/// As [`logc_mc_grid`] for an arbitrary summed log summary likelihood.
pub fn logc_mc_grid_with<R, F>(
    log_lik: F,
    prior: &BaselinePrior,
    method: &NormalizationMethod,
    rng: &mut R,
) -> Result<LogCTable>
where
    R: Rng + ?Sized,
    F: Fn(&Vector4<f64>) -> f64,
{
    let (grid, draws) = match method {
        NormalizationMethod::MonteCarloGrid { grid, mc_draws } => (grid, *mc_draws),
        NormalizationMethod::ClosedFormLinearized => {
            return Err(NppError::InvalidParameter(
                "Monte-Carlo normalizer requested with a closed-form method".into(),
            ))
        }
    };
    method.validate()?;
    let l = prior.cholesky_l();
    let m0 = prior.mean();
    let sums: Vec<f64> = (0..draws)
        .map(|_| {
            let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let ll = log_lik(&(m0 + l * z));
            if ll.is_nan() {
                f64::NEG_INFINITY
            } else {
                ll
            }
        })
        .collect();
    let log_m = (draws as f64).ln();
    let log_c = grid
        .iter()
        .map(|&a| {
            let scaled = sums.iter().map(|&s| if s == f64::NEG_INFINITY && a == 0.0 { 0.0 } else { a * s });
            log_sum_exp(scaled) - log_m
        })
        .collect();

    let max = sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (sw, sw2) = sums.iter().fold((0.0, 0.0), |(a, b), &s| {
        let w = (s - max).exp();
        (a + w, b + w * w)
    });
    let ess = if sw2 > 0.0 { sw * sw / sw2 } else { 0.0 };
    Ok(LogCTable {
        grid: grid.clone(),
        log_c,
        ess_at_one: Some(ess),
    })
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
