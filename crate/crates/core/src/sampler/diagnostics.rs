//! Split-R-hat and rank-normalized bulk effective sample size.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{mean, PosteriorDraws};

pub const RHAT_FLAG: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub names: Vec<String>,
    pub split_rhat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    pub mean_accept: f64,
    pub divergence_count: usize,
}

impl Diagnostics {
    pub fn flagged(&self) -> bool {
        self.split_rhat.iter().any(|r| !(*r <= RHAT_FLAG))
    }
}

pub fn diagnostics(draws: &PosteriorDraws) -> Diagnostics {
    let names = draws.layout().names();
    let mut split_rhat = Vec::with_capacity(names.len());
    let mut ess_bulk = Vec::with_capacity(names.len());
    for col in draws.columns() {
        let chains = split_halves(&draws.split_by_chain(col));
        split_rhat.push(rhat(&chains));
        let ranked = rank_normalize(&chains);
        let refs: Vec<&[f64]> = ranked.iter().map(Vec::as_slice).collect();
        ess_bulk.push(ess(&refs));
    }
    let stats = draws.chain_stats();
    let mean_accept = if stats.is_empty() {
        f64::NAN
    } else {
        stats.iter().map(|s| s.mean_accept).sum::<f64>() / stats.len() as f64
    };
    Diagnostics {
        names,
        split_rhat,
        ess_bulk,
        mean_accept,
        divergence_count: stats.iter().map(|s| s.divergences).sum(),
    }
}

fn split_halves<'a>(chains: &[&'a [f64]]) -> Vec<&'a [f64]> {
    chains
        .iter()
        .flat_map(|c| {
            let half = c.len() / 2;
            // the middle draw of an odd-length chain is dropped
            [&c[..half], &c[c.len() - half..]]
        })
        .collect()
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Potential scale reduction over (already split) chains, never below 1.
pub fn rhat(chains: &[&[f64]]) -> f64 {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0) as f64;
    if chains.len() < 2 || n < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| variance(c)).sum::<f64>() / chains.len() as f64;
    let b_over_n = variance(&means);
    let var_plus = (n - 1.0) / n * w + b_over_n;
    if w == 0.0 {
        return if b_over_n == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (var_plus / w).sqrt().max(1.0)
}

fn rank_normalize(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // average rank over ties, ranks starting at 1
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, k) in &all[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

fn autocovariance(v: &[f64], m: f64, lag: usize) -> f64 {
    let n = v.len();
    (0..n - lag).map(|i| (v[i] - m) * (v[i + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size with Geyer's initial monotone sequence.
pub fn ess(chains: &[&[f64]]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let mean_acov = |lag: usize| {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocovariance(c, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let mean_var = mean_acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += variance(&means);
    }
    if var_plus == 0.0 {
        return f64::NAN;
    }
    let rho_at = |lag: usize| 1.0 - (mean_var - mean_acov(lag)) / var_plus;

    let mut rho = vec![0.0; n + 2];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho_at(1);
    rho[1] = rho_odd;
    let mut s = 1;
    while s + 4 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho_at(s + 1);
        rho_odd = rho_at(s + 2);
        if rho_even + rho_odd >= 0.0 {
            rho[s + 1] = rho_even;
            rho[s + 2] = rho_odd;
        }
        s += 2;
    }
    let max_s = s;
    if rho_even > 0.0 {
        rho[max_s + 1] = rho_even;
    }
    let mut k = 1;
    while k + 3 <= max_s {
        if rho[k + 1] + rho[k + 2] > rho[k - 1] + rho[k] {
            rho[k + 1] = (rho[k - 1] + rho[k]) / 2.0;
            rho[k + 2] = rho[k + 1];
        }
        k += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho[..max_s].iter().sum::<f64>() + rho[max_s + 1];
    let tau = tau.max(1.0 / total.log10());
    total / tau
}
