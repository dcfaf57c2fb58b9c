use enrich_npp::model::{generate_outcome, mle_fit, sample_subject, design_row, Subject};
use enrich_npp::rng::stream;
use enrich_npp::sampler::diagnostics::diagnostics;
use enrich_npp::{
    sample_posterior, BaselinePrior, BetaPrior, CoefficientVector, MappingKind, MappingSpec, NppPosterior,
    OutcomeFamily, SamplerConfig, TrialDataset,
};
use enrich_npp::borrowing::make_historical_summary;
use nalgebra::{Matrix4, Vector4};

fn simulate(family: OutcomeFamily, truth: &CoefficientVector, n: usize, seed: u64) -> TrialDataset {
    let mut rng = stream(seed, &[]);
    let mut data = TrialDataset::empty(family);
    for i in 0..n {
        let (x, t) = sample_subject(0.5, 0.5, None, &mut rng).unwrap();
        let y = generate_outcome(family, truth, x, t, &mut rng);
        data.push(Subject { x, t, y, enroll_index: i }).unwrap();
    }
    data
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0)
}

#[test]
fn conjugate_gaussian_posterior() {
    let truth = CoefficientVector::new(0.3, -0.2, 0.5, 0.4);
    let data = simulate(OutcomeFamily::GaussianIdentity, &truth, 150, 21);
    let prior = BaselinePrior::isotropic(5.0).unwrap();
    let post = NppPosterior::from_data(&data, &[], &prior, true, None)
        .unwrap()
        .with_fixed_sigma(1.0)
        .unwrap();

    // ridge solution of the conjugate normal model with unit noise
    let mut precision = Matrix4::identity() / 25.0;
    let mut score = Vector4::zeros();
    for s in data.subjects() {
        let v = design_row(s.x, s.t);
        precision += v * v.transpose();
        score += v * s.y;
    }
    let cov = precision.try_inverse().unwrap();
    let mean_ref = cov * score;

    let config = SamplerConfig {
        n_chains: 4,
        ..SamplerConfig::default()
    }
    .with_seed(8);
    let draws = sample_posterior(&post, &post.initial_point(), &config).unwrap();
    let diag = diagnostics(&draws);
    for j in 0..4 {
        let col = draws.beta(j);
        let mc_se = (cov[(j, j)] / diag.ess_bulk[j]).sqrt();
        assert!((mean(col) - mean_ref[j]).abs() <= 3.0 * mc_se, "beta{j}: {} vs {}", mean(col), mean_ref[j]);
        for k in 0..4 {
            let c = covariance(col, draws.beta(k));
            let scale = (cov[(j, j)] * cov[(k, k)]).sqrt();
            assert!((c - cov[(j, k)]).abs() <= 0.1 * scale, "cov({j},{k}): {c} vs {}", cov[(j, k)]);
        }
    }
    assert!(!diag.flagged());
}

#[test]
fn no_borrowing_logistic_agrees_with_mle() {
    let truth = CoefficientVector::new(-0.2, 0.4, 0.0, 0.0);
    let data = simulate(OutcomeFamily::BernoulliLogit, &truth, 600, 4);
    let fit = mle_fit(&data).unwrap().coefficients.betas();
    let prior = BaselinePrior::isotropic(5.0).unwrap();
    let post = NppPosterior::from_data(&data, &[], &prior, true, None).unwrap();
    let draws = sample_posterior(&post, &post.initial_point(), &SamplerConfig::default().with_seed(3)).unwrap();
    for j in 0..4 {
        let col = draws.beta(j);
        let sd = covariance(col, col).sqrt();
        assert!((mean(col) - fit[j]).abs() <= 0.5 * sd, "beta{j}");
    }
}

#[test]
fn discordant_summary_contracts_the_weight() {
    let truth = CoefficientVector::new(-0.2, 0.4, 0.0, 0.0);
    let spec = MappingSpec::new(MappingKind::LogitLogit, 0.5).unwrap();
    let data = simulate(OutcomeFamily::BernoulliLogit, &truth, 600, 17);
    let prior = BaselinePrior::isotropic(5.0).unwrap();
    for delta in [-2.0, 2.0] {
        let s = make_historical_summary(&truth, spec, delta, 500, 500, BetaPrior::new(4.0, 1.0).unwrap()).unwrap();
        let post = NppPosterior::from_data(&data, &[s], &prior, true, None).unwrap();
        let draws = sample_posterior(&post, &post.initial_point(), &SamplerConfig::default().with_seed(5)).unwrap();
        let a = draws.mean_a()[0];
        assert!(a <= 0.1, "delta {delta}: mean weight {a}");
        assert!(draws.a(0).iter().all(|&w| w > 0.0 && w < 1.0));
    }
}
