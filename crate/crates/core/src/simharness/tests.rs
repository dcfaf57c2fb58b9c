use super::*;
use crate::borrowing::{BaselinePrior, BetaPrior, MappingKind, NormalizationMethod};
use crate::design::{DesignConfig, Direction, StopReason};
use crate::model::{CoefficientVector, OutcomeFamily};
use crate::sampler::SamplerConfig;

fn logistic(beta3: f64, n_t: u32, delta: f64) -> ScenarioConfig {
    ScenarioConfig {
        id: "logistic".into(),
        family: OutcomeFamily::BernoulliLogit,
        beta_true: CoefficientVector::new(-0.2, 0.4, 0.0, beta3),
        prevalence: 0.5,
        rand_ratio: 0.5,
        design: DesignConfig {
            n_max: 600,
            interim_ns: vec![400],
            alpha: 0.05,
            clinical_threshold: 0.0,
            efficacy_margin: 0.0,
            futility_margin: 0.0,
            efficacy_cutoff: 0.99,
            futility_cutoff: 0.80,
            direction: Direction::HigherBetter,
            candidate_levels: vec![0, 1],
        },
        prior: BaselinePrior::isotropic(5.0).unwrap(),
        summaries: vec![SummarySource::Generated {
            mapping: MappingKind::LogitLogit,
            mu_x_hist: 0.5,
            delta_bias: delta,
            n_t,
            n_c: None,
            a_prior: BetaPrior::new(4.0, 1.0).unwrap(),
        }],
        normalization: NormalizationMethod::ClosedFormLinearized,
        linearized: true,
        sampler: SamplerConfig {
            n_iter: 300,
            n_warmup: 150,
            ..SamplerConfig::default()
        },
        n_reps: 6,
        base_seed: 42,
    }
}

#[test]
fn vacuous_cutoff_stops_at_first_look() {
    let mut s = logistic(0.0, 500, 0.0);
    s.design.efficacy_cutoff = 0.0;
    let prepared = PreparedScenario::new(s).unwrap();
    for r in 0..4 {
        let t = run_trial(&prepared, r).unwrap();
        assert_eq!(t.stop_reason, StopReason::Efficacy);
        assert_eq!(t.stop_stage, 0);
        assert_eq!(t.final_n, 400);
        assert!(t.success);
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let s = logistic(0.65, 500, 0.0);
    let one = run_oc(&s, 1).unwrap();
    let three = run_oc(&s, 3).unwrap();
    assert_eq!(one, three);
    assert_eq!(one.n_reps_completed, 6);
    assert!(one.generalized_power.is_some());
    assert_eq!(one.mean_a.len(), 1);
}

#[test]
fn disabled_generator_matches_empty_list() {
    let off = logistic(0.0, 0, 0.0);
    let mut empty = off.clone();
    empty.summaries.clear();
    let a = run_oc(&off, 1).unwrap();
    let b = run_oc(&empty, 1).unwrap();
    assert_eq!(a, b);
    assert!(a.mean_a.is_empty());
    assert!(a.generalized_power.is_none());
}

#[test]
fn sweep_preserves_order_and_isolates_failures() {
    assert!(sweep(&[], 1).is_empty());
    let good = logistic(0.0, 300, 0.1);
    let mut bad = good.clone();
    bad.prevalence = 1.5;
    let rows = sweep(&[good.clone(), bad, good], 1);
    assert_eq!(rows.len(), 3);
    assert!(rows[1].is_err());
    assert_eq!(rows[0].as_ref().unwrap(), rows[2].as_ref().unwrap());
}

#[test]
fn exact_mapping_uses_weight_grid() {
    let mut s = logistic(0.0, 500, 0.0);
    s.linearized = false;
    s.normalization = NormalizationMethod::monte_carlo(101, 2000);
    s.n_reps = 2;
    let p = PreparedScenario::new(s.clone()).unwrap();
    assert!(p.grid.is_some());
    run_trial(&p, 0).unwrap();
    s.normalization = NormalizationMethod::ClosedFormLinearized;
    assert!(PreparedScenario::new(s).is_err());
}

#[test]
fn enrichment_restricts_later_accrual() {
    let mut s = logistic(1.5, 0, 0.0);
    // cutoffs of 1 can never be exceeded, so the trial runs to n_max
    s.design.efficacy_cutoff = 1.0;
    s.design.futility_cutoff = 1.0;
    let p = PreparedScenario::new(s).unwrap();
    let (result, fits) = run_trial_detailed(&p, 3).unwrap();
    assert_eq!(result.stop_reason, StopReason::MaxN);
    assert_eq!(fits.len(), 2);
    assert_eq!(result.trace[0].subspace, crate::model::BiomarkerSet::single(1));
    let early = &fits[1].data.subjects()[..400];
    let late = &fits[1].data.subjects()[400..];
    assert!(early.iter().any(|s| s.x == 0));
    assert!(late.iter().all(|s| s.x == 1));
}
