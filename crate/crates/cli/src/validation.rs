//! Oracle suites behind the `validate` command.

use std::fmt;

use enrich_npp::borrowing::{
    linearize_summary, log_joint_posterior, logc_mc_grid, make_historical_summary, mapping_h, mapping_jacobian,
    ClosedFormNormalizer, Normalizer, SummaryTerm,
};
use enrich_npp::model::{design_row, generate_outcome, sample_subject, Subject};
use enrich_npp::rng::stream;
use enrich_npp::sampler::diagnostics::diagnostics;
use enrich_npp::{
    sample_posterior, BaselinePrior, BetaPrior, CoefficientVector, HistoricalSummary, MappingKind, MappingSpec,
    NormalizationMethod, NppPosterior, OutcomeFamily, SamplerConfig, TrialDataset,
};
use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// Analytic suites only.
    Quick,
    /// Adds the Monte-Carlo and sampler suites.
    Full,
}

/// Fault injection used to check that the suites can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Hooks {
    /// Added to every analytic Jacobian entry before comparison.
    pub jacobian_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

pub const MAPPING_KINDS: [MappingKind; 5] = [
    MappingKind::IdentityIdentity,
    MappingKind::IdentityLogit,
    MappingKind::LogitLogit,
    MappingKind::LogLogit,
    MappingKind::InverseLogit,
];

pub fn run(level: Level, hooks: Hooks) -> Vec<SuiteReport> {
    let mut out = vec![
        jacobian_suite(hooks),
        zero_weight_normalizer_suite(),
        zero_weight_posterior_suite(),
        taylor_gap_suite(),
    ];
    if level == Level::Full {
        out.push(closed_form_vs_monte_carlo_suite());
        out.push(normalizer_exponent_suite());
        out.push(conjugate_sampler_suite());
        out.push(beta_prior_ks_suite());
    }
    out
}

fn report(name: &'static str, passed: bool, detail: String) -> SuiteReport {
    SuiteReport { name, passed, detail }
}

/// Analytic Jacobians against central differences, step 1e-6, at 100
/// points with N(0, 1) coefficients for every mapping.
pub fn jacobian_suite(hooks: Hooks) -> SuiteReport {
    let mut rng = stream(101, &[]);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for kind in MAPPING_KINDS {
        let mut points = 0;
        while points < 100 {
            let b = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let mu = rng.random_range(0.05..0.95);
            let beta = CoefficientVector::from_betas(&b, 1.0);
            let spec = MappingSpec::new(kind, mu).expect("prevalence in range");
            // the reciprocal mapping is ill-conditioned next to its pole
            let near_pole = (0..4).any(|c| enrich_npp::model::cell_design_rows()[c].dot(&b).abs() < 0.2);
            if kind == MappingKind::InverseLogit && near_pole {
                continue;
            }
            let Ok(analytic) = mapping_jacobian(&spec, &beta) else { continue };
            let analytic = analytic.add_scalar(hooks.jacobian_offset);
            let h = 1e-6;
            let fd = Vector4::from_fn(|j, _| {
                let (mut up, mut dn) = (b, b);
                up[j] += h;
                dn[j] -= h;
                let f = |v: &Vector4<f64>| mapping_h(&spec, &CoefficientVector::from_betas(v, 1.0)).unwrap_or(f64::NAN);
                (f(&up) - f(&dn)) / (2.0 * h)
            });
            if !fd.iter().all(|v| v.is_finite()) {
                continue;
            }
            worst = worst.max((analytic - fd).norm() / fd.norm().max(1e-3));
            points += 1;
            checked += 1;
        }
    }
    report(
        "jacobian",
        worst <= 1e-5,
        format!("{checked} points over 5 mappings, worst relative error {worst:.2e} (limit 1e-5)"),
    )
}

fn identity_summary(m: f64, v: f64) -> HistoricalSummary {
    let spec = MappingSpec::new(MappingKind::IdentityIdentity, 0.5).expect("valid prevalence");
    HistoricalSummary::scalar(m, v, spec, BetaPrior::new(4.0, 1.0).expect("valid")).expect("valid summary")
}

fn closed_form(s: &HistoricalSummary, prior: &BaselinePrior) -> ClosedFormNormalizer {
    let lin = linearize_summary(s, &CoefficientVector::new(0.0, 0.0, 0.0, 0.0)).expect("linear mapping");
    ClosedFormNormalizer::new(&[lin], prior).expect("positive definite")
}

pub fn zero_weight_normalizer_suite() -> SuiteReport {
    let prior = BaselinePrior::isotropic(5.0).expect("valid prior");
    let s = identity_summary(0.4, 0.2);
    let cf = closed_form(&s, &prior).log_c(&[0.0]);
    let mc = logc_mc_grid(&[s], &prior, &NormalizationMethod::monte_carlo(11, 1000), &mut stream(102, &[]))
        .map(|t| t.values()[0]);
    let passed = cf.as_ref().is_ok_and(|v| *v == 0.0) && mc.as_ref().is_ok_and(|v| *v == 0.0);
    report("logc_zero", passed, format!("closed form {cf:?}, Monte Carlo {mc:?} at a = 0"))
}

fn small_dataset(family: OutcomeFamily, n: usize, seed: u64) -> TrialDataset {
    let truth = CoefficientVector::new(0.3, -0.2, 0.5, 0.4);
    let mut rng = stream(seed, &[]);
    let mut data = TrialDataset::empty(family);
    for i in 0..n {
        let (x, t) = sample_subject(0.5, 0.5, None, &mut rng).expect("valid probabilities");
        let y = generate_outcome(family, &truth, x, t, &mut rng);
        data.push(Subject { x, t, y, enroll_index: i }).expect("valid subject");
    }
    data
}

/// With every weight pinned at zero the posterior is the no-borrowing
/// posterior up to a constant. The weight prior is uniform so the
/// constant is finite.
pub fn zero_weight_posterior_suite() -> SuiteReport {
    let prior = BaselinePrior::isotropic(5.0).expect("valid prior");
    let spec = MappingSpec::new(MappingKind::LogitLogit, 0.5).expect("valid");
    let hist = make_historical_summary(
        &CoefficientVector::new(-0.2, 0.4, 0.0, 0.65),
        spec,
        0.3,
        500,
        500,
        BetaPrior::new(1.0, 1.0).expect("valid"),
    )
    .expect("valid summary");
    let mut worst: f64 = 0.0;
    let mut rng = stream(103, &[]);
    for family in [OutcomeFamily::BernoulliLogit, OutcomeFamily::GaussianIdentity] {
        let data = small_dataset(family, 120, 104);
        let lin = linearize_summary(&hist, &CoefficientVector::new(0.0, 0.0, 0.0, 0.0)).expect("anchor");
        let normalizer = Normalizer::ClosedForm(ClosedFormNormalizer::new(std::slice::from_ref(&lin), &prior).expect("psd"));
        let terms = [SummaryTerm::Linearized(lin)];
        let mut first = None;
        for _ in 0..50 {
            let b = Vector4::from_fn(|_, _| rng.random_range(-1.5..1.5));
            let beta = CoefficientVector::from_betas(&b, rng.random_range(0.5..2.0));
            let off = log_joint_posterior(&beta, &[], &data, &[], &prior, &Normalizer::None);
            let pinned = log_joint_posterior(&beta, &[0.0], &data, &terms, &prior, &normalizer);
            let (Ok(off), Ok(pinned)) = (off, pinned) else {
                return report("zero_weight_posterior", false, "density evaluation failed".into());
            };
            let d = pinned - off;
            let f = *first.get_or_insert(d);
            worst = worst.max((d - f).abs());
        }
    }
    report(
        "zero_weight_posterior",
        worst < 1e-9,
        format!("max spread of the log-density offset {worst:.1e} over 100 points"),
    )
}

/// Fraction of perturbations of norm at most 0.3 around the anchor whose
/// exact and linearized log summary likelihoods differ by at most 0.05.
pub fn taylor_gap_fraction(n: usize, seed: u64) -> f64 {
    let truth = CoefficientVector::new(-0.2, 0.4, 0.0, 0.65);
    let spec = MappingSpec::new(MappingKind::LogitLogit, 0.5).expect("valid");
    let s = make_historical_summary(&truth, spec, 0.0, 500, 500, BetaPrior::new(4.0, 1.0).expect("valid"))
        .expect("valid summary");
    let lin = linearize_summary(&s, &truth).expect("anchor");
    let mut rng = stream(seed, &[]);
    let within = (0..n)
        .filter(|_| {
            let dir = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            let b = truth.betas() + dir * (0.3 * rng.random::<f64>());
            s.log_likelihood(&b).is_ok_and(|e| (e - lin.log_likelihood(&b)).abs() <= 0.05)
        })
        .count();
    within as f64 / n as f64
}

pub fn taylor_gap_suite() -> SuiteReport {
    let frac = taylor_gap_fraction(1000, 105);
    report(
        "taylor_gap",
        frac >= 0.95,
        format!("{:.1}% of 1000 perturbations within 0.05 (need 95%)", 100.0 * frac),
    )
}

/// Largest |closed form - Monte Carlo| over the 101-node grid at
/// M = 20,000 for a few linear summaries.
pub fn closed_form_vs_monte_carlo_gap(seed: u64) -> f64 {
    let prior = BaselinePrior::isotropic(5.0).expect("valid prior");
    let mut worst: f64 = 0.0;
    for (k, (m, v)) in [(0.3, 0.25), (-0.4, 0.597), (0.07, 1.538), (1.2, 1.0)].into_iter().enumerate() {
        let s = identity_summary(m, v);
        let cf = closed_form(&s, &prior);
        let method = NormalizationMethod::monte_carlo(101, 20_000);
        let Ok(table) = logc_mc_grid(&[s], &prior, &method, &mut stream(seed, &[k as u64])) else {
            return f64::INFINITY;
        };
        for (a, mc) in table.rows() {
            worst = worst.max((cf.log_c(&[a]).unwrap_or(f64::NAN) - mc).abs());
        }
    }
    worst
}

pub fn closed_form_vs_monte_carlo_suite() -> SuiteReport {
    let worst = closed_form_vs_monte_carlo_gap(106);
    report(
        "logc_closed_vs_mc",
        worst <= 0.05,
        format!("max |closed form - Monte Carlo| {worst:.4} over 101 nodes, M = 20000 (limit 0.05)"),
    )
}

/// Reference `log C(a)` for one linear summary `D beta ~ N(m, V)` under
/// `beta ~ N(m0, S0)`, from the marginal `D beta ~ N(D m0, D S0 D')`:
///
/// `-1/2 log|I + a D S0 D' V^-1| - 1/2 e(a) r' (V + a D S0 D')^-1 r`,
/// `r = m - D m0`, with `e(a) = a` or `e(a) = a^2` as selected.
pub fn reference_log_c(
    a: f64,
    d: &DMatrix<f64>,
    m: &DVector<f64>,
    v: &DMatrix<f64>,
    m0: &Vector4<f64>,
    s0: &Matrix4<f64>,
    squared_exponent: bool,
) -> f64 {
    let s0 = DMatrix::from_fn(4, 4, |i, j| s0[(i, j)]);
    let m0 = DVector::from_column_slice(m0.as_slice());
    let s = d * &s0 * d.transpose();
    let r = m - d * m0;
    let k = m.len();
    let q = DMatrix::identity(k, k) + &s * v.clone().try_inverse().expect("invertible") * a;
    let inner = (v + &s * a).try_inverse().expect("invertible");
    let quad = (r.transpose() * inner * &r)[(0, 0)];
    let factor = if squared_exponent { a * a } else { a };
    -0.5 * q.determinant().ln() - 0.5 * factor * quad
}

/// Plain Monte-Carlo `log C(a)` for the same setting, independent of the
/// engine's grid code.
pub fn direct_monte_carlo_log_c(a: f64, summary: &HistoricalSummary, prior: &BaselinePrior, draws: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, &[]);
    let l = prior.cholesky_l();
    let values: Vec<f64> = (0..draws)
        .map(|_| {
            let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            a * summary.log_likelihood(&(prior.mean() + l * z)).unwrap_or(f64::NEG_INFINITY)
        })
        .collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + (values.iter().map(|v| (v - max).exp()).sum::<f64>() / draws as f64).ln()
}

/// Errors of the engine's closed form and of the squared-exponent variant
/// against a precise Monte-Carlo oracle at `a = 0.1, ..., 0.9`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentCheck {
    pub engine_error: f64,
    pub linear_form_error: f64,
    pub squared_form_error: f64,
}

pub fn exponent_check(draws: usize, seed: u64) -> ExponentCheck {
    // a tight prior keeps the quadratic term large so the two forms separate
    let prior = BaselinePrior::isotropic(0.5).expect("valid prior");
    let (m, v) = (1.5, 0.5);
    let s = identity_summary(m, v);
    let cf = closed_form(&s, &prior);
    let d = DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 1.0, 0.5]);
    let (mv, vv) = (DVector::from_element(1, m), DMatrix::from_element(1, 1, v));
    let mut out = ExponentCheck {
        engine_error: 0.0,
        linear_form_error: 0.0,
        squared_form_error: 0.0,
    };
    for k in 1..=9 {
        let a = k as f64 / 10.0;
        let mc = direct_monte_carlo_log_c(a, &s, &prior, draws, seed);
        let engine = cf.log_c(&[a]).unwrap_or(f64::NAN);
        let lin = reference_log_c(a, &d, &mv, &vv, prior.mean(), prior.covariance(), false);
        let sq = reference_log_c(a, &d, &mv, &vv, prior.mean(), prior.covariance(), true);
        out.engine_error = out.engine_error.max((engine - mc).abs());
        out.linear_form_error = out.linear_form_error.max((lin - mc).abs());
        out.squared_form_error = out.squared_form_error.max((sq - mc).abs());
    }
    out
}

pub fn normalizer_exponent_suite() -> SuiteReport {
    let c = exponent_check(400_000, 107);
    report(
        "logc_exponent",
        c.engine_error <= 0.02 && c.linear_form_error <= 0.02,
        format!(
            "max error vs Monte Carlo over a = 0.1..0.9: engine {:.4}, factor a {:.4}, factor a^2 {:.4}",
            c.engine_error, c.linear_form_error, c.squared_form_error
        ),
    )
}

/// Largest standardized error of the posterior mean (in Monte-Carlo SEs)
/// and largest relative covariance error, Gaussian data with known
/// sigma = 1 and a N(0, 25 I) prior.
pub fn conjugate_sampler_errors(seed: u64) -> (f64, f64) {
    let data = small_dataset(OutcomeFamily::GaussianIdentity, 150, 108);
    let prior = BaselinePrior::isotropic(5.0).expect("valid prior");
    let post = NppPosterior::from_data(&data, &[], &prior, true, None)
        .and_then(|p| p.with_fixed_sigma(1.0))
        .expect("valid posterior");
    let mut precision = Matrix4::identity() / 25.0;
    let mut score = Vector4::zeros();
    for s in data.subjects() {
        let v = design_row(s.x, s.t);
        precision += v * v.transpose();
        score += v * s.y;
    }
    let cov = precision.try_inverse().expect("invertible");
    let mean_ref = cov * score;
    let config = SamplerConfig {
        n_chains: 4,
        ..SamplerConfig::default()
    }
    .with_seed(seed);
    let Ok(draws) = sample_posterior(&post, &post.initial_point(), &config) else {
        return (f64::INFINITY, f64::INFINITY);
    };
    let diag = diagnostics(&draws);
    let mean = |c: &[f64]| c.iter().sum::<f64>() / c.len() as f64;
    let mut z_worst: f64 = 0.0;
    let mut cov_worst: f64 = 0.0;
    for j in 0..4 {
        let cj = draws.beta(j);
        let mc_se = (cov[(j, j)] / diag.ess_bulk[j]).sqrt();
        z_worst = z_worst.max((mean(cj) - mean_ref[j]).abs() / mc_se);
        for k in 0..4 {
            let ck = draws.beta(k);
            let (mj, mk) = (mean(cj), mean(ck));
            let c = cj.iter().zip(ck).map(|(x, y)| (x - mj) * (y - mk)).sum::<f64>() / (cj.len() as f64 - 1.0);
            let scale = (cov[(j, j)] * cov[(k, k)]).sqrt();
            cov_worst = cov_worst.max((c - cov[(j, k)]).abs() / scale);
        }
    }
    (z_worst, cov_worst)
}

pub fn conjugate_sampler_suite() -> SuiteReport {
    let (z, c) = conjugate_sampler_errors(109);
    report(
        "conjugate_sampler",
        z <= 3.0 && c <= 0.10,
        format!("posterior mean within {z:.2} MC SE (limit 3), covariance error {:.1}% (limit 10%)", 100.0 * c),
    )
}

/// Kolmogorov-Smirnov statistic (scaled by sqrt(n)) of 10,000 sampled
/// weights under a Beta(4, 1) prior with a flat data term.
pub fn beta_prior_ks(seed: u64) -> f64 {
    // the Gaussian summary with huge variance makes the data term flat
    let data = TrialDataset::empty(OutcomeFamily::BernoulliLogit);
    let prior = BaselinePrior::isotropic(1.0).expect("valid prior");
    let spec = MappingSpec::new(MappingKind::IdentityIdentity, 0.5).expect("valid");
    let s = HistoricalSummary::scalar(0.0, 1e12, spec, BetaPrior::new(4.0, 1.0).expect("valid")).expect("valid");
    let Ok(post) = NppPosterior::from_data(&data, &[s], &prior, true, None) else {
        return f64::INFINITY;
    };
    let config = SamplerConfig {
        n_iter: 10_000,
        ..SamplerConfig::default()
    }
    .with_seed(seed);
    let Ok(draws) = sample_posterior(&post, &post.initial_point(), &config) else {
        return f64::INFINITY;
    };
    let mut a = draws.a(0).to_vec();
    a.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    let d = a
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = x.powi(4);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    d * n.sqrt()
}

/// Asymptotic 1% critical value of the scaled KS statistic.
pub const KS_CRITICAL_1PCT: f64 = 1.628;

pub fn beta_prior_ks_suite() -> SuiteReport {
    let ks = beta_prior_ks(110);
    report(
        "beta_prior_ks",
        ks < KS_CRITICAL_1PCT,
        format!("sqrt(n) * D = {ks:.3} (1% critical value {KS_CRITICAL_1PCT})"),
    )
}
