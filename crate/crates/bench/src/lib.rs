//! Fixtures shared by the benchmarks.

use enrich_npp::borrowing::make_historical_summary;
use enrich_npp::design::Direction;
use enrich_npp::model::{generate_outcome, sample_subject};
use enrich_npp::rng::stream;
use enrich_npp::{
    BaselinePrior, BetaPrior, CoefficientVector, DesignConfig, HistoricalSummary, MappingKind, MappingSpec,
    NormalizationMethod, OutcomeFamily, SamplerConfig, ScenarioConfig, Subject, SummarySource, TrialDataset,
};

pub fn null_truth() -> CoefficientVector {
    CoefficientVector::new(-0.2, 0.4, 0.0, 0.0)
}

/// Logistic trial data of size `n` under the null truth.
pub fn logistic_data(n: usize, seed: u64) -> TrialDataset {
    let truth = null_truth();
    let mut rng = stream(seed, &[]);
    let mut data = TrialDataset::empty(OutcomeFamily::BernoulliLogit);
    for i in 0..n {
        let (x, t) = sample_subject(0.5, 0.5, None, &mut rng).expect("valid probabilities");
        let y = generate_outcome(OutcomeFamily::BernoulliLogit, &truth, x, t, &mut rng);
        data.push(Subject { x, t, y, enroll_index: i }).expect("valid subject");
    }
    data
}

pub fn logit_summary(delta: f64) -> HistoricalSummary {
    let spec = MappingSpec::new(MappingKind::LogitLogit, 0.5).expect("valid prevalence");
    make_historical_summary(&null_truth(), spec, delta, 500, 500, BetaPrior::new(4.0, 1.0).expect("valid"))
        .expect("valid summary")
}

/// The logistic enrichment scenario with one generated summary.
pub fn logistic_scenario(linearized: bool, n_reps: usize) -> ScenarioConfig {
    ScenarioConfig {
        id: "bench".into(),
        family: OutcomeFamily::BernoulliLogit,
        beta_true: null_truth(),
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
            futility_cutoff: 0.8,
            direction: Direction::HigherBetter,
            candidate_levels: vec![0, 1],
        },
        prior: BaselinePrior::isotropic(5.0).expect("valid prior"),
        summaries: vec![SummarySource::Generated {
            mapping: MappingKind::LogitLogit,
            mu_x_hist: 0.5,
            delta_bias: 0.0,
            n_t: 500,
            n_c: None,
            a_prior: BetaPrior::new(4.0, 1.0).expect("valid"),
        }],
        normalization: if linearized {
            NormalizationMethod::ClosedFormLinearized
        } else {
            NormalizationMethod::monte_carlo(101, 20_000)
        },
        linearized,
        sampler: SamplerConfig::default(),
        n_reps,
        base_seed: 1,
    }
}
