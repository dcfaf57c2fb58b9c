//! Posterior sampling over `(beta, a_1..a_H, sigma)`.
//!
//! The sampler runs in unconstrained coordinates: weights through a logit
//! transform and the residual scale through a log transform, with the
//! log-Jacobian terms added to the density.

mod adapt;
pub mod diagnostics;
mod nuts;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NppError, Result};
use crate::model::{inv_logit, logit};
use crate::rng::{purpose, stream};
use nuts::{Nuts, PhasePoint, Target};

pub use diagnostics::{diagnostics, Diagnostics};

/// Packing of a parameter point: `beta0..beta3`, then `n_weights` borrowing
/// weights, then `sigma` when present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_weights: usize,
    pub has_sigma: bool,
}

impl ParamLayout {
    pub fn dim(&self) -> usize {
        4 + self.n_weights + usize::from(self.has_sigma)
    }

    pub fn sigma_index(&self) -> Option<usize> {
        self.has_sigma.then_some(4 + self.n_weights)
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..4).map(|i| format!("beta{i}")).collect();
        names.extend((1..=self.n_weights).map(|h| format!("a_{h}")));
        if self.has_sigma {
            names.push("sigma".into());
        }
        names
    }
}

/// A log density (up to a constant) with gradient on the constrained
/// parameter space. Values outside the support may be non-finite.
pub trait PosteriorDensity {
    fn layout(&self) -> ParamLayout;
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_chains")]
    pub n_chains: usize,
    /// Post-warmup draws per chain.
    #[serde(default = "default_iter")]
    pub n_iter: usize,
    #[serde(default = "default_warmup")]
    pub n_warmup: usize,
    #[serde(default = "default_target")]
    pub target_accept: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_depth")]
    pub max_depth: usize,
}

fn default_chains() -> usize {
    1
}
fn default_iter() -> usize {
    2000
}
fn default_warmup() -> usize {
    500
}
fn default_target() -> f64 {
    0.8
}
fn default_depth() -> usize {
    10
}

impl Default for SamplerConfig {
    /// One chain of 2,500 iterations of which 500 are warmup.
    fn default() -> Self {
        Self {
            n_chains: default_chains(),
            n_iter: default_iter(),
            n_warmup: default_warmup(),
            target_accept: default_target(),
            seed: 0,
            max_depth: default_depth(),
        }
    }
}

impl SamplerConfig {
    /// Four-chain setting for single-trial illustrations.
    pub fn illustration() -> Self {
        Self {
            n_chains: 4,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_warmup == 0 || self.max_depth == 0 {
            return Err(NppError::InvalidParameter(
                "n_chains, n_warmup and max_depth must be positive".into(),
            ));
        }
        if self.n_iter < 100 {
            return Err(NppError::InvalidParameter(format!("n_iter must be at least 100, got {}", self.n_iter)));
        }
        if !(self.target_accept > 0.2 && self.target_accept < 0.99) {
            return Err(NppError::InvalidParameter(format!(
                "target_accept must lie in (0.2, 0.99), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }
}

/// Per-chain sampler statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainStats {
    pub step_size: f64,
    pub mean_accept: f64,
    pub divergences: usize,
    pub mean_leapfrog: f64,
}

/// Post-warmup draws, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    beta: [Vec<f64>; 4],
    a: Vec<Vec<f64>>,
    sigma: Option<Vec<f64>>,
    chain_ids: Vec<usize>,
    chain_stats: Vec<ChainStats>,
}

impl PosteriorDraws {
    fn empty(layout: ParamLayout) -> Self {
        Self {
            beta: Default::default(),
            a: vec![Vec::new(); layout.n_weights],
            sigma: layout.has_sigma.then(Vec::new),
            chain_ids: Vec::new(),
            chain_stats: Vec::new(),
        }
    }

    /// Builds draws from explicit rows of packed parameters.
    pub fn from_rows(layout: ParamLayout, rows: &[Vec<f64>], chain_ids: Vec<usize>) -> Result<Self> {
        if rows.len() != chain_ids.len() || rows.iter().any(|r| r.len() != layout.dim()) {
            return Err(NppError::InvalidParameter("draw rows do not match the layout".into()));
        }
        let mut d = Self::empty(layout);
        for r in rows {
            d.push(layout, r);
        }
        d.chain_ids = chain_ids;
        Ok(d)
    }

    fn push(&mut self, layout: ParamLayout, theta: &[f64]) {
        for (col, v) in self.beta.iter_mut().zip(theta) {
            col.push(*v);
        }
        for (h, col) in self.a.iter_mut().enumerate() {
            col.push(theta[4 + h]);
        }
        if let (Some(col), Some(i)) = (self.sigma.as_mut(), layout.sigma_index()) {
            col.push(theta[i]);
        }
    }

    pub fn len(&self) -> usize {
        self.chain_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chain_ids.is_empty()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_weights: self.a.len(),
            has_sigma: self.sigma.is_some(),
        }
    }

    pub fn n_chains(&self) -> usize {
        self.chain_ids.iter().max().map_or(0, |m| m + 1)
    }

    pub fn beta(&self, j: usize) -> &[f64] {
        &self.beta[j]
    }

    pub fn a(&self, h: usize) -> &[f64] {
        &self.a[h]
    }

    pub fn sigma(&self) -> Option<&[f64]> {
        self.sigma.as_deref()
    }

    pub fn chain_ids(&self) -> &[usize] {
        &self.chain_ids
    }

    pub fn chain_stats(&self) -> &[ChainStats] {
        &self.chain_stats
    }

    /// All parameter columns in layout order.
    pub fn columns(&self) -> Vec<&[f64]> {
        let mut cols: Vec<&[f64]> = self.beta.iter().map(Vec::as_slice).collect();
        cols.extend(self.a.iter().map(Vec::as_slice));
        if let Some(s) = &self.sigma {
            cols.push(s);
        }
        cols
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns().iter().map(|c| c[i]).collect()
    }

    pub fn mean_a(&self) -> Vec<f64> {
        self.a.iter().map(|c| mean(c)).collect()
    }

    /// Draws of the conditional treatment effect `beta2 + beta3 * x`.
    pub fn blip_draws(&self, x: u8) -> Vec<f64> {
        let xf = f64::from(x);
        self.beta[2].iter().zip(&self.beta[3]).map(|(b2, b3)| b2 + b3 * xf).collect()
    }

    /// Chain-by-chain slices of a column.
    pub fn split_by_chain<'a>(&self, col: &'a [f64]) -> Vec<&'a [f64]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.chain_ids.len() {
            if i == self.chain_ids.len() || self.chain_ids[i] != self.chain_ids[start] {
                out.push(&col[start..i]);
                start = i;
            }
        }
        out
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// The density seen in unconstrained coordinates.
struct Unconstrained<'a, D: PosteriorDensity + ?Sized> {
    density: &'a D,
    layout: ParamLayout,
}

impl<D: PosteriorDensity + ?Sized> Unconstrained<'_, D> {
    fn constrain(&self, q: &[f64], theta: &mut [f64]) {
        theta[..4].copy_from_slice(&q[..4]);
        for h in 0..self.layout.n_weights {
            theta[4 + h] = inv_logit(q[4 + h]);
        }
        if let Some(i) = self.layout.sigma_index() {
            theta[i] = q[i].exp();
        }
    }

    fn unconstrain(&self, theta: &[f64]) -> Vec<f64> {
        let mut q = theta.to_vec();
        for h in 0..self.layout.n_weights {
            q[4 + h] = logit(theta[4 + h]);
        }
        if let Some(i) = self.layout.sigma_index() {
            q[i] = theta[i].ln();
        }
        q
    }
}

impl<D: PosteriorDensity + ?Sized> Target for Unconstrained<'_, D> {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let mut theta: nuts::Vector = nuts::Vector::from_elem(0.0, q.len());
        self.constrain(q, &mut theta);
        for h in 0..self.layout.n_weights {
            let a = theta[4 + h];
            if !(a > 0.0 && a < 1.0) {
                return f64::NEG_INFINITY;
            }
        }
        let mut lp = self.density.log_density_grad(&theta, grad);
        for h in 0..self.layout.n_weights {
            let a = theta[4 + h];
            lp += a.ln() + (1.0 - a).ln();
            grad[4 + h] = grad[4 + h] * a * (1.0 - a) + (1.0 - 2.0 * a);
        }
        if let Some(i) = self.layout.sigma_index() {
            let s = theta[i];
            lp += q[i];
            grad[i] = grad[i] * s + 1.0;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return f64::NEG_INFINITY;
        }
        lp
    }
}

const INIT_ATTEMPTS: usize = 100;

/// Draws `n_chains * n_iter` post-warmup samples from `density`.
///
/// Each chain has its own stream derived from `(config.seed, chain)`, so a
/// given configuration always yields bit-identical draws.
pub fn sample_posterior<D: PosteriorDensity + ?Sized>(
    density: &D,
    init: &[f64],
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let layout = density.layout();
    if init.len() != layout.dim() {
        return Err(NppError::InvalidParameter(format!(
            "initial point has {} entries, layout needs {}",
            init.len(),
            layout.dim()
        )));
    }
    if (0..layout.n_weights).any(|h| !(init[4 + h] > 0.0 && init[4 + h] < 1.0))
        || layout.sigma_index().is_some_and(|i| !(init[i] > 0.0))
    {
        return Err(NppError::InvalidParameter(
            "initial weights must lie in (0, 1) and sigma must be positive".into(),
        ));
    }
    let target = Unconstrained { density, layout };
    let q_init = target.unconstrain(init);

    let mut draws = PosteriorDraws::empty(layout);
    let mut theta = vec![0.0; layout.dim()];
    for chain in 0..config.n_chains {
        let mut rng = stream(config.seed, &[purpose::MCMC, chain as u64]);
        let start = find_start(&target, &q_init, &mut stream(config.seed, &[purpose::JITTER, chain as u64]))?;
        let mut nuts = Nuts::new(&target, start);
        nuts.max_depth = config.max_depth;
        nuts.init_step_size(&mut rng);

        let mut step = adapt::DualAveraging::new(config.target_accept);
        step.set_mu((10.0 * nuts.step_size).ln());
        let mut metric = adapt::WindowedMetric::new(layout.dim(), config.n_warmup);
        for _ in 0..config.n_warmup {
            let info = nuts.transition(&mut rng);
            nuts.step_size = step.learn(info.accept_stat);
            let q: nuts::Vector = nuts.position().iter().copied().collect();
            if metric.learn(&mut nuts.inv_metric, &q) {
                nuts.init_step_size(&mut rng);
                step.set_mu((10.0 * nuts.step_size).ln());
                step.restart();
            }
        }
        nuts.step_size = step.final_step_size();

        let (mut acc, mut div, mut leap) = (0.0, 0, 0);
        for iteration in 0..config.n_iter {
            let info = nuts.transition(&mut rng);
            acc += info.accept_stat;
            div += usize::from(info.divergent);
            leap += info.n_leapfrog;
            target.constrain(nuts.position(), &mut theta);
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(NppError::NonFiniteDensity { chain, iteration });
            }
            draws.push(layout, &theta);
            draws.chain_ids.push(chain);
        }
        draws.chain_stats.push(ChainStats {
            step_size: nuts.step_size,
            mean_accept: acc / config.n_iter as f64,
            divergences: div,
            mean_leapfrog: leap as f64 / config.n_iter as f64,
        });
    }
    Ok(draws)
}

fn find_start<T: Target, R: Rng + ?Sized>(target: &T, q0: &[f64], rng: &mut R) -> Result<PhasePoint> {
    let z = PhasePoint::new(target, q0);
    if z.log_p.is_finite() {
        return Ok(z);
    }
    let mut q: Vec<f64> = q0.to_vec();
    for _ in 0..INIT_ATTEMPTS {
        for (v, c) in q.iter_mut().zip(q0) {
            *v = c + rng.random_range(-2.0..2.0);
        }
        let z = PhasePoint::new(target, &q);
        if z.log_p.is_finite() {
            return Ok(z);
        }
    }
    Err(NppError::InitializationFailure { attempts: INIT_ATTEMPTS })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::borrowing::BetaPrior;
    use statrs::distribution::{Beta, ContinuousCDF};

    /// Independent Gaussian coefficients and Beta weights.
    struct Toy {
        mean: [f64; 4],
        sd: [f64; 4],
        weights: Vec<BetaPrior>,
    }

    impl PosteriorDensity for Toy {
        fn layout(&self) -> ParamLayout {
            ParamLayout {
                n_weights: self.weights.len(),
                has_sigma: false,
            }
        }

        fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
            let mut lp = 0.0;
            for j in 0..4 {
                let z = (theta[j] - self.mean[j]) / self.sd[j];
                lp -= 0.5 * z * z;
                grad[j] = -z / self.sd[j];
            }
            for (h, b) in self.weights.iter().enumerate() {
                lp += b.log_density(theta[4 + h]);
                grad[4 + h] = b.d_log_density(theta[4 + h]);
            }
            lp
        }
    }

    fn toy() -> Toy {
        Toy {
            mean: [1.0, -2.0, 0.5, 3.0],
            sd: [1.0, 0.1, 2.0, 0.5],
            weights: vec![BetaPrior::new(4.0, 1.0).unwrap()],
        }
    }

    #[test]
    fn recovers_independent_targets() {
        let t = toy();
        let config = SamplerConfig {
            n_chains: 2,
            n_iter: 4000,
            ..SamplerConfig::default()
        };
        let d = sample_posterior(&t, &[0.0, 0.0, 0.0, 0.0, 0.5], &config).unwrap();
        assert_eq!(d.len(), 8000);
        assert_eq!(d.n_chains(), 2);
        for j in 0..4 {
            let m = mean(d.beta(j));
            assert!((m - t.mean[j]).abs() < 5.0 * t.sd[j] / 80.0, "beta{j} mean {m}");
        }
        assert!((d.mean_a()[0] - 0.8).abs() < 0.01);
        assert!(d.a(0).iter().all(|&a| a > 0.0 && a < 1.0));
    }

    #[test]
    fn beta_prior_only_passes_ks() {
        let t = toy();
        let config = SamplerConfig {
            n_iter: 10_000,
            seed: 7,
            ..SamplerConfig::default()
        };
        let d = sample_posterior(&t, &[1.0, -2.0, 0.5, 3.0, 0.8], &config).unwrap();
        let mut a = d.a(0).to_vec();
        a.sort_by(f64::total_cmp);
        let dist = Beta::new(4.0, 1.0).unwrap();
        let n = a.len() as f64;
        let ks = a
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = dist.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // NUTS draws are nearly independent here; thin-free 1% critical value
        assert!(ks < 1.628 / n.sqrt(), "KS {ks}");
    }

    #[test]
    fn deterministic_given_seed() {
        let t = toy();
        let config = SamplerConfig {
            n_iter: 200,
            n_warmup: 100,
            seed: 11,
            ..SamplerConfig::default()
        };
        let init = [0.0, 0.0, 0.0, 0.0, 0.5];
        let a = sample_posterior(&t, &init, &config).unwrap();
        let b = sample_posterior(&t, &init, &config).unwrap();
        assert_eq!(a, b);
        let c = sample_posterior(&t, &init, &config.with_seed(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_configuration() {
        let t = toy();
        let init = [0.0, 0.0, 0.0, 0.0, 0.5];
        let bad = SamplerConfig {
            n_iter: 50,
            ..SamplerConfig::default()
        };
        assert!(sample_posterior(&t, &init, &bad).is_err());
        let bad = SamplerConfig {
            target_accept: 0.995,
            ..SamplerConfig::default()
        };
        assert!(sample_posterior(&t, &init, &bad).is_err());
        assert!(sample_posterior(&t, &[0.0, 0.0, 0.0, 0.0, 1.0], &SamplerConfig::default()).is_err());
    }

    #[test]
    fn initialization_failure_is_reported() {
        struct Nowhere;
        impl PosteriorDensity for Nowhere {
            fn layout(&self) -> ParamLayout {
                ParamLayout { n_weights: 0, has_sigma: false }
            }
            fn log_density_grad(&self, _: &[f64], _: &mut [f64]) -> f64 {
                f64::NEG_INFINITY
            }
        }
        let r = sample_posterior(&Nowhere, &[0.0; 4], &SamplerConfig::default());
        assert_eq!(r.unwrap_err(), NppError::InitializationFailure { attempts: 100 });
    }
}
