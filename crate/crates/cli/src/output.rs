//! Result tables and single-trial dumps.

use std::io::Write;

use enrich_npp::simharness::LookFit;
use enrich_npp::{OperatingCharacteristics, PosteriorDraws, ScenarioConfig, TrialDataset, TrialResult};
use serde::Serialize;

use crate::scenario_file::{ExpandedScenario, Method};

/// One row of the operating-characteristics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OcRow {
    pub scenario_id: String,
    pub n_t: Option<u32>,
    pub delta: Option<f64>,
    pub mu_x_hist: Option<f64>,
    pub method: Method,
    /// Per-summary mean weights joined with `;`.
    pub mean_a: String,
    pub efficacy_rate: f64,
    pub gen_power: Option<f64>,
    pub futility_rate: f64,
    pub ess: f64,
    pub mc_se_efficacy: f64,
    pub n_failed: usize,
    pub base_seed: u64,
}

impl OcRow {
    pub fn new(scenario: &ExpandedScenario, oc: &OperatingCharacteristics) -> Self {
        Self {
            scenario_id: oc.scenario_id.clone(),
            n_t: scenario.labels.n_t,
            delta: scenario.labels.delta,
            mu_x_hist: scenario.labels.mu_x_hist,
            method: scenario.labels.method,
            mean_a: oc.mean_a.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(";"),
            efficacy_rate: oc.efficacy_rate,
            gen_power: oc.generalized_power,
            futility_rate: oc.futility_rate,
            ess: oc.ess,
            mc_se_efficacy: oc.mc_se.efficacy_rate,
            n_failed: oc.n_failed,
            base_seed: scenario.config.base_seed,
        }
    }
}

/// JSON record: the row, the full metrics and the config that produced them.
#[derive(Debug, Clone, Serialize)]
pub struct OcRecord<'a> {
    pub row: &'a OcRow,
    pub metrics: &'a OperatingCharacteristics,
    pub config: &'a ScenarioConfig,
}

pub fn write_oc_csv<W: Write>(out: W, rows: &[OcRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(mut out: W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)
}

/// Draws as `chain, iter, beta0..beta3, a_1..a_H, sigma`; `sigma` is empty
/// for Bernoulli outcomes.
pub fn write_draws_csv<W: Write>(out: W, draws: &PosteriorDraws) -> csv::Result<()> {
    let layout = draws.layout();
    let h = layout.n_weights;
    let mut header: Vec<String> = ["chain", "iter", "beta0", "beta1", "beta2", "beta3"].map(String::from).to_vec();
    header.extend((1..=h).map(|k| format!("a_{k}")));
    header.push("sigma".into());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header)?;
    let mut iter_in_chain = vec![0usize; draws.n_chains()];
    for (i, &chain) in draws.chain_ids().iter().enumerate() {
        let mut rec = vec![chain.to_string(), iter_in_chain[chain].to_string()];
        iter_in_chain[chain] += 1;
        rec.extend((0..4).map(|j| draws.beta(j)[i].to_string()));
        rec.extend((0..h).map(|k| draws.a(k)[i].to_string()));
        rec.push(draws.sigma().map(|s| s[i].to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_subjects_csv<W: Write>(out: W, data: &TrialDataset) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["enroll_index", "x", "t", "y"])?;
    for s in data.subjects() {
        w.write_record([s.enroll_index.to_string(), s.x.to_string(), s.t.to_string(), s.y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    /// Mean and equal-tailed 95% interval.
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            lower: q(0.025),
            upper: q(0.975),
        }
    }

    pub fn excludes_zero(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }
}

/// Posterior summary of the treatment effect in each biomarker level at one
/// analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LookSummary {
    pub stage: usize,
    pub n: usize,
    pub effect_x0: Interval,
    pub effect_x1: Interval,
    pub mean_a: Vec<f64>,
}

impl LookSummary {
    pub fn new(fit: &LookFit) -> Self {
        Self {
            stage: fit.stage,
            n: fit.data.len(),
            effect_x0: Interval::of(&fit.draws.blip_draws(0)),
            effect_x1: Interval::of(&fit.draws.blip_draws(1)),
            mean_a: fit.draws.mean_a(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialSummary<'a> {
    pub scenario_id: &'a str,
    pub base_seed: u64,
    pub result: &'a TrialResult,
    pub looks: Vec<LookSummary>,
}
