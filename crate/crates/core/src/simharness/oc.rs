use rayon::prelude::*;
use serde::Serialize;

use super::scenario::ScenarioConfig;
use super::trial::{run_trial, PreparedScenario};
use crate::design::{StopReason, TrialResult};
use crate::error::{NppError, Result};

/// Binomial (or sample) Monte-Carlo standard errors of the reported metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McStandardErrors {
    pub efficacy_rate: f64,
    pub generalized_power: Option<f64>,
    pub futility_rate: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingCharacteristics {
    pub scenario_id: String,
    /// Type I error under a null truth, power otherwise.
    pub efficacy_rate: f64,
    /// Absent when no biomarker level truly benefits.
    pub generalized_power: Option<f64>,
    pub futility_rate: f64,
    /// Mean final sample size, early stops counted at their stopping size.
    pub ess: f64,
    /// Mean over replicates of the posterior mean weight at the decisive
    /// analysis.
    pub mean_a: Vec<f64>,
    pub n_reps_completed: usize,
    pub n_failed: usize,
    pub mc_se: McStandardErrors,
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Aggregates completed replicates.
pub fn aggregate(scenario: &PreparedScenario, results: &[TrialResult], n_failed: usize) -> OperatingCharacteristics {
    let n = results.len();
    let nf = n as f64;
    let rate = |f: &dyn Fn(&TrialResult) -> bool| results.iter().filter(|r| f(r)).count() as f64 / nf;
    let efficacy_rate = rate(&|r| r.success);
    let futility_rate = rate(&|r| r.stop_reason == StopReason::Futility);
    let generalized_power = (!scenario.truth_subspace.is_empty())
        .then(|| rate(&|r| r.success && r.final_subspace == scenario.truth_subspace));
    let sizes: Vec<f64> = results.iter().map(|r| r.final_n as f64).collect();
    let ess = sizes.iter().sum::<f64>() / nf;
    let ess_var = sizes.iter().map(|s| (s - ess) * (s - ess)).sum::<f64>() / (nf - 1.0).max(1.0);
    let h = scenario.summaries.len();
    let mean_a = (0..h)
        .map(|k| results.iter().map(|r| r.mean_a[k]).sum::<f64>() / nf)
        .collect();
    OperatingCharacteristics {
        scenario_id: scenario.config.id.clone(),
        efficacy_rate,
        generalized_power,
        futility_rate,
        ess,
        mean_a,
        n_reps_completed: n,
        n_failed,
        mc_se: McStandardErrors {
            efficacy_rate: binomial_se(efficacy_rate, n),
            generalized_power: generalized_power.map(|p| binomial_se(p, n)),
            futility_rate: binomial_se(futility_rate, n),
            ess: (ess_var / nf).sqrt(),
        },
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| NppError::InvalidParameter(format!("cannot start worker pool: {e}")))
}

/// Runs replicates `0..n_reps` on `workers` threads, in replicate order.
pub fn run_replicates(scenario: &PreparedScenario, workers: usize) -> Result<Vec<Result<TrialResult>>> {
    let n = scenario.config.n_reps as u64;
    Ok(pool(workers)?.install(|| (0..n).into_par_iter().map(|r| run_trial(scenario, r)).collect()))
}

/// Operating characteristics of a prepared scenario. Fails when more than
/// 1% of replicates fail.
pub fn run_prepared(scenario: &PreparedScenario, workers: usize) -> Result<OperatingCharacteristics> {
    let all = run_replicates(scenario, workers)?;
    let total = all.len();
    let results: Vec<TrialResult> = all.into_iter().filter_map(|r| r.ok()).collect();
    let failed = total - results.len();
    if failed * 100 > total || results.is_empty() {
        return Err(NppError::ScenarioFailed {
            scenario: scenario.config.id.clone(),
            failed,
            total,
        });
    }
    Ok(aggregate(scenario, &results, failed))
}

pub fn run_oc(scenario: &ScenarioConfig, workers: usize) -> Result<OperatingCharacteristics> {
    run_prepared(&PreparedScenario::new(scenario.clone())?, workers)
}

/// One result per scenario, in input order; failures stay per scenario.
pub fn sweep(scenarios: &[ScenarioConfig], workers: usize) -> Vec<Result<OperatingCharacteristics>> {
    scenarios.iter().map(|s| run_oc(s, workers)).collect()
}
