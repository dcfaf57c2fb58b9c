use std::sync::Arc;

use rand::RngCore;

use super::scenario::ScenarioConfig;
use crate::borrowing::{logc_mc_grid, HistoricalSummary, LogCTable, NormalizationMethod, NppPosterior};
use crate::design::{
    effective_subspace, empirical_weights, enriched_effect_draws, interim_decision, true_subspace, DecisionKind,
    LookRecord, StopReason, TrialResult,
};
use crate::error::{NppError, Result};
use crate::model::{generate_outcome, sample_subject, BiomarkerSet, Subject, TrialDataset};
use crate::rng::{purpose, stream};
use crate::sampler::{sample_posterior, PosteriorDraws};

/// Scenario data shared by every replicate: the historical summaries and,
/// for exact mappings, the weight grid of the normalizing constant.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub config: ScenarioConfig,
    pub summaries: Vec<HistoricalSummary>,
    pub grid: Option<Arc<LogCTable>>,
    /// Levels that truly benefit; empty under a null truth.
    pub truth_subspace: BiomarkerSet,
}

impl PreparedScenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let summaries = config.historical_summaries()?;
        let grid = match (&config.normalization, summaries.is_empty()) {
            (NormalizationMethod::MonteCarloGrid { .. }, false) => {
                if summaries.len() > 1 {
                    return Err(NppError::InvalidParameter(
                        "the Monte-Carlo weight grid supports a single historical summary".into(),
                    ));
                }
                let mut rng = stream(config.base_seed, &[purpose::NORMALIZER]);
                let table = logc_mc_grid(&summaries, &config.prior, &config.normalization, &mut rng)?;
                Some(Arc::new(table))
            }
            _ => None,
        };
        let d = &config.design;
        let truth_subspace = true_subspace(&config.beta_true, &d.candidate_levels, d.clinical_threshold, d.direction);
        Ok(Self {
            config,
            summaries,
            grid,
            truth_subspace,
        })
    }
}

/// Posterior fit at one analysis, kept for single-trial output.
#[derive(Debug, Clone)]
pub struct LookFit {
    pub stage: usize,
    pub data: TrialDataset,
    pub draws: PosteriorDraws,
}

/// Runs replicate `replicate_id` of the adaptive procedure.
pub fn run_trial(scenario: &PreparedScenario, replicate_id: u64) -> Result<TrialResult> {
    run_trial_inner(scenario, replicate_id, None)
}

/// As [`run_trial`], also returning every analysis' data and draws.
pub fn run_trial_detailed(scenario: &PreparedScenario, replicate_id: u64) -> Result<(TrialResult, Vec<LookFit>)> {
    let mut fits = Vec::new();
    let r = run_trial_inner(scenario, replicate_id, Some(&mut fits))?;
    Ok((r, fits))
}

fn run_trial_inner(
    scenario: &PreparedScenario,
    replicate_id: u64,
    mut keep: Option<&mut Vec<LookFit>>,
) -> Result<TrialResult> {
    let cfg = &scenario.config;
    let design = &cfg.design;
    let seed = cfg.base_seed;
    let mut data_rng = stream(seed, &[replicate_id, purpose::DATA]);
    let mut data = TrialDataset::empty(cfg.family);
    let mut restriction: Option<BiomarkerSet> = None;
    let mut trace = Vec::new();
    let looks: Vec<usize> = design.looks().collect();

    for (stage, &n_look) in looks.iter().enumerate() {
        while data.len() < n_look {
            let (x, t) = sample_subject(cfg.prevalence, cfg.rand_ratio, restriction.as_ref(), &mut data_rng)?;
            let y = generate_outcome(cfg.family, &cfg.beta_true, x, t, &mut data_rng);
            let enroll_index = data.len();
            data.push(Subject { x, t, y, enroll_index })?;
        }

        let post = NppPosterior::from_data(&data, &scenario.summaries, &cfg.prior, cfg.linearized, scenario.grid.clone())?;
        let sampler_seed = stream(seed, &[replicate_id, purpose::MCMC, stage as u64]).next_u64();
        let draws = sample_posterior(&post, &post.initial_point(), &cfg.sampler.with_seed(sampler_seed))?;

        let subspace = effective_subspace(
            &draws,
            &design.candidate_levels,
            design.clinical_threshold,
            design.alpha,
            design.direction,
        );
        let weights = empirical_weights(&data, &subspace)?;
        let delta = enriched_effect_draws(&draws, &weights, design.direction);
        let decision = interim_decision(&delta, design, &subspace);
        let mean_a = draws.mean_a();
        trace.push(LookRecord {
            stage,
            n: data.len(),
            subspace: subspace.clone(),
            prob_efficacy: decision.prob_efficacy,
            prob_futility: decision.prob_futility,
            decision: decision.kind,
            mean_a: mean_a.clone(),
        });
        if let Some(k) = keep.as_deref_mut() {
            k.push(LookFit {
                stage,
                data: data.clone(),
                draws,
            });
        }

        let is_final = stage + 1 == looks.len();
        let reason = match decision.kind {
            DecisionKind::StopEfficacy => Some(StopReason::Efficacy),
            DecisionKind::StopFutility => Some(StopReason::Futility),
            DecisionKind::ContinueEnriched if is_final => Some(StopReason::MaxN),
            DecisionKind::ContinueEnriched => None,
        };
        if let Some(stop_reason) = reason {
            return Ok(TrialResult {
                stop_stage: stage,
                stop_reason,
                final_n: data.len(),
                final_subspace: subspace,
                success: stop_reason == StopReason::Efficacy,
                mean_a,
                trace,
            });
        }
        restriction = Some(subspace);
    }
    unreachable!("the final look always stops the trial")
}
