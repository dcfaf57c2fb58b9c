//! Adaptive enrichment decisions: effective subspace, enriched effect and
//! the efficacy and futility rules.

use serde::{Deserialize, Serialize};

use crate::error::{NppError, Result};
use crate::model::{blip, BiomarkerSet, CoefficientVector, TrialDataset, BIOMARKER_LEVELS};
use crate::sampler::PosteriorDraws;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::HigherBetter => 1.0,
            Direction::LowerBetter => -1.0,
        }
    }
}

fn default_levels() -> Vec<u8> {
    BIOMARKER_LEVELS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub n_max: usize,
    /// Sample sizes at the interim looks.
    pub interim_ns: Vec<usize>,
    /// Tail probability for subspace membership.
    pub alpha: f64,
    /// Clinically relevant effect threshold.
    pub clinical_threshold: f64,
    pub efficacy_margin: f64,
    pub futility_margin: f64,
    /// Posterior probability cutoff for stopping for efficacy.
    pub efficacy_cutoff: f64,
    pub futility_cutoff: f64,
    pub direction: Direction,
    #[serde(default = "default_levels")]
    pub candidate_levels: Vec<u8>,
}

impl DesignConfig {
    /// Structural checks the engine relies on.
    pub fn check(&self) -> Result<()> {
        if self.interim_ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(NppError::InvalidParameter("interim_ns must be strictly increasing".into()));
        }
        if self.interim_ns.first() == Some(&0) || self.interim_ns.last().is_some_and(|&n| n >= self.n_max) {
            return Err(NppError::InvalidParameter(
                "interim sample sizes must be positive and below n_max".into(),
            ));
        }
        if self.n_max == 0 {
            return Err(NppError::InvalidParameter("n_max must be positive".into()));
        }
        let probs = [self.alpha, self.efficacy_cutoff, self.futility_cutoff];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(NppError::InvalidParameter("probabilities must lie in [0, 1]".into()));
        }
        let margins = [self.clinical_threshold, self.efficacy_margin, self.futility_margin];
        if margins.iter().any(|m| !m.is_finite()) {
            return Err(NppError::InvalidParameter("thresholds must be finite".into()));
        }
        BiomarkerSet::new(self.candidate_levels.iter().copied())?;
        if self.candidate_levels.is_empty() {
            return Err(NppError::InvalidParameter("candidate_levels must not be empty".into()));
        }
        Ok(())
    }

    /// Full validation applied to user-supplied designs.
    pub fn validate(&self) -> Result<()> {
        self.check()?;
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(NppError::InvalidParameter(format!("alpha must lie in (0, 0.5), got {}", self.alpha)));
        }
        for (name, v) in [("efficacy_cutoff", self.efficacy_cutoff), ("futility_cutoff", self.futility_cutoff)] {
            if !(v > 0.5 && v < 1.0) {
                return Err(NppError::InvalidParameter(format!("{name} must lie in (0.5, 1), got {v}")));
            }
        }
        Ok(())
    }

    /// Sample sizes of every analysis, the final one included.
    pub fn looks(&self) -> impl Iterator<Item = usize> + '_ {
        self.interim_ns.iter().copied().chain(std::iter::once(self.n_max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    StopEfficacy,
    StopFutility,
    ContinueEnriched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterimDecision {
    pub kind: DecisionKind,
    pub subspace: BiomarkerSet,
    pub prob_efficacy: f64,
    pub prob_futility: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Efficacy,
    Futility,
    MaxN,
}

/// One analysis in a trial's decision trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookRecord {
    pub stage: usize,
    pub n: usize,
    pub subspace: BiomarkerSet,
    pub prob_efficacy: f64,
    pub prob_futility: f64,
    pub decision: DecisionKind,
    pub mean_a: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Index of the decisive analysis; the final analysis has index
    /// `interim_ns.len()`.
    pub stop_stage: usize,
    pub stop_reason: StopReason,
    pub final_n: usize,
    pub final_subspace: BiomarkerSet,
    pub success: bool,
    pub mean_a: Vec<f64>,
    pub trace: Vec<LookRecord>,
}

fn fraction(values: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    values.iter().filter(|&&v| pred(v)).count() as f64 / values.len() as f64
}

/// Levels whose signed effect exceeds the threshold with posterior
/// probability above `1 - alpha`; every candidate level when none does.
pub fn effective_subspace(
    draws: &PosteriorDraws,
    candidate_xs: &[u8],
    e1: f64,
    alpha: f64,
    direction: Direction,
) -> BiomarkerSet {
    let s = direction.sign();
    let chosen: Vec<u8> = candidate_xs
        .iter()
        .copied()
        .filter(|&x| fraction(&draws.blip_draws(x), |g| s * g > e1) > 1.0 - alpha)
        .collect();
    let levels = if chosen.is_empty() { candidate_xs.to_vec() } else { chosen };
    BiomarkerSet::new(levels).unwrap_or_else(|_| BiomarkerSet::full())
}

/// Empirical distribution of the biomarker among enrolled subjects within
/// `subspace`, as `(level, weight)` pairs.
pub fn empirical_weights(data: &TrialDataset, subspace: &BiomarkerSet) -> Result<Vec<(u8, f64)>> {
    let counts: Vec<(u8, usize)> = subspace
        .levels()
        .iter()
        .map(|&x| (x, data.subjects().iter().filter(|s| s.x == x).count()))
        .collect();
    let total: usize = counts.iter().map(|c| c.1).sum();
    if total == 0 {
        return Err(NppError::EmptySubspaceSample(subspace.levels().to_vec()));
    }
    Ok(counts
        .into_iter()
        .map(|(x, c)| (x, c as f64 / total as f64))
        .collect())
}

/// Per-draw enriched effect `sum_x w(x) * s * gamma(x)`; larger is better.
pub fn enriched_effect_draws(draws: &PosteriorDraws, weights: &[(u8, f64)], direction: Direction) -> Vec<f64> {
    let s = direction.sign();
    let (b2, b3) = (draws.beta(2), draws.beta(3));
    let w_total: f64 = weights.iter().map(|w| w.1).sum();
    let w_x: f64 = weights.iter().map(|&(x, w)| w * f64::from(x)).sum();
    b2.iter().zip(b3).map(|(g0, g1)| s * (w_total * g0 + w_x * g1)).collect()
}

pub fn interim_decision(delta_draws: &[f64], config: &DesignConfig, subspace: &BiomarkerSet) -> InterimDecision {
    let prob_efficacy = fraction(delta_draws, |d| d > config.efficacy_margin);
    let prob_futility = fraction(delta_draws, |d| d < config.futility_margin);
    let kind = if prob_efficacy > config.efficacy_cutoff {
        DecisionKind::StopEfficacy
    } else if prob_futility > config.futility_cutoff {
        DecisionKind::StopFutility
    } else {
        DecisionKind::ContinueEnriched
    };
    InterimDecision {
        kind,
        subspace: subspace.clone(),
        prob_efficacy,
        prob_futility,
    }
}

/// Efficacy rule at the maximum sample size.
pub fn final_analysis(delta_draws: &[f64], config: &DesignConfig) -> bool {
    fraction(delta_draws, |d| d > config.efficacy_margin) > config.efficacy_cutoff
}

/// Levels that truly benefit under `truth`.
pub fn true_subspace(truth: &CoefficientVector, candidate_xs: &[u8], e1: f64, direction: Direction) -> BiomarkerSet {
    let s = direction.sign();
    BiomarkerSet::new(candidate_xs.iter().copied().filter(|&x| s * blip(truth, x) > e1))
        .unwrap_or_else(|_| BiomarkerSet::empty())
}

/// Whether `identified` equals the true benefiting set; always false when
/// no level benefits.
pub fn correct_subspace(identified: &BiomarkerSet, truth: &CoefficientVector, e1: f64, direction: Direction) -> bool {
    let t = true_subspace(truth, &BIOMARKER_LEVELS, e1, direction);
    !t.is_empty() && *identified == t
}
