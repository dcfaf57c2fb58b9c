//! Acceptance run: every criterion at 1,000 replicates, one line each.
//!
//! Scenarios come from the bundled files; identical configurations are
//! simulated once and shared between criteria. Set ENRICH_NPP_THREADS to
//! choose the worker count.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use enrich_npp::borrowing::{linearize_summary, make_historical_summary, ClosedFormNormalizer};
use enrich_npp::rng::stream;
use enrich_npp::simharness::run_oc;
use enrich_npp::{
    BaselinePrior, BetaPrior, CoefficientVector, HistoricalSummary, MappingKind, MappingSpec,
    OperatingCharacteristics,
};
use enrich_npp_cli::validation::{self, Hooks};
use enrich_npp_cli::{ExpandedScenario, Method, ScenarioFile};
use nalgebra::Vector4;
use rand::Rng;
use rand_distr::StandardNormal;

struct Check {
    label: String,
    pass: bool,
}

fn within(label: &str, value: f64, target: f64, tol: f64) -> Check {
    Check {
        label: format!("{label} {value:.3} (target {target} +/- {tol})"),
        pass: (value - target).abs() <= tol,
    }
}

fn at_most(label: &str, value: f64, limit: f64) -> Check {
    Check {
        label: format!("{label} {value:.3} (<= {limit})"),
        pass: value <= limit,
    }
}

fn at_least(label: &str, value: f64, limit: f64) -> Check {
    Check {
        label: format!("{label} {value:.3} (>= {limit})"),
        pass: value >= limit,
    }
}

fn flag(label: &str, pass: bool) -> Check {
    Check {
        label: label.to_string(),
        pass,
    }
}

struct Runner {
    rows: HashMap<&'static str, Vec<ExpandedScenario>>,
    cache: HashMap<String, OperatingCharacteristics>,
    workers: usize,
}

#[derive(Clone, Copy)]
struct Select {
    method: Method,
    n_t: u32,
    delta: f64,
    mu: f64,
}

const BASE: Select = Select {
    method: Method::Linearized,
    n_t: 500,
    delta: 0.0,
    mu: 0.5,
};

impl Runner {
    fn new() -> Self {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
        let rows = ["table2", "table3", "table4", "table5"]
            .into_iter()
            .map(|name| {
                let file = ScenarioFile::load(&dir.join(format!("{name}.toml"))).expect("bundled file parses");
                (name, file.expand().expect("bundled file expands"))
            })
            .collect();
        let workers = std::env::var("ENRICH_NPP_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        Self {
            rows,
            cache: HashMap::new(),
            workers,
        }
    }

    fn run(&mut self, row: &ExpandedScenario) -> OperatingCharacteristics {
        let mut key_cfg = row.config.clone();
        key_cfg.id.clear();
        let key = serde_json::to_string(&key_cfg).expect("config serializes");
        if let Some(oc) = self.cache.get(&key) {
            return oc.clone();
        }
        let t = Instant::now();
        let oc = run_oc(&row.config, self.workers).unwrap_or_else(|e| panic!("{}: {e}", row.config.id));
        eprintln!("  ran {} in {:.0} s", row.config.id, t.elapsed().as_secs_f64());
        self.cache.insert(key, oc.clone());
        oc
    }

    fn by_id(&mut self, table: &'static str, id: &str) -> OperatingCharacteristics {
        let row = self.rows[table]
            .iter()
            .find(|r| r.config.id == id)
            .unwrap_or_else(|| panic!("{table} has no scenario `{id}`"))
            .clone();
        self.run(&row)
    }

    /// Borrowing scenario of a table matching the selection.
    fn borrowing(&mut self, table: &'static str, s: Select) -> OperatingCharacteristics {
        let row = self.rows[table]
            .iter()
            .find(|r| {
                r.labels.method == s.method
                    && r.labels.n_t == Some(s.n_t)
                    && r.labels.delta == Some(s.delta)
                    && r.labels.mu_x_hist == Some(s.mu)
            })
            .unwrap_or_else(|| panic!("{table} has no scenario for n_t={} delta={} mu={}", s.n_t, s.delta, s.mu))
            .clone();
        self.run(&row)
    }
}

fn criterion_1(r: &mut Runner) -> Vec<Check> {
    let oc = r.by_id("table2", "t2/none");
    vec![
        within("type I", oc.efficacy_rate, 0.033, 0.017),
        within("futility", oc.futility_rate, 0.27, 0.045),
        within("ESS", oc.ess, 553.1, 15.0),
    ]
}

fn criterion_2(r: &mut Runner) -> Vec<Check> {
    let oc = r.borrowing("table2", BASE);
    vec![
        within("mean a", oc.mean_a[0], 0.80, 0.03),
        within("type I", oc.efficacy_rate, 0.016, 0.013),
        within("ESS", oc.ess, 584.8, 10.0),
    ]
}

fn criterion_3(r: &mut Runner) -> Vec<Check> {
    let at = |r: &mut Runner, delta: f64| r.borrowing("table3", Select { delta, ..BASE });
    let (m05, p05, p10, p20) = (at(r, -0.5), at(r, 0.5), at(r, 1.0), at(r, 2.0));
    vec![
        at_most("type I at delta -0.5", m05.efficacy_rate, 0.01),
        within("type I at delta 0.5", p05.efficacy_rate, 0.454, 0.05),
        within("type I at delta 1.0", p10.efficacy_rate, 0.594, 0.05),
        within("mean a at delta 1.0", p10.mean_a[0], 0.49, 0.05),
        within("type I at delta 2.0", p20.efficacy_rate, 0.160, 0.04),
        within("mean a at delta 2.0", p20.mean_a[0], 0.05, 0.02),
        flag(
            "peak at delta 1.0",
            p10.efficacy_rate > p05.efficacy_rate && p10.efficacy_rate > p20.efficacy_rate,
        ),
    ]
}

fn criterion_4(r: &mut Runner) -> Vec<Check> {
    let none = r.by_id("table4", "t4/none");
    let d0 = r.borrowing("table4", BASE);
    let d05 = r.borrowing("table4", Select { delta: 0.5, ..BASE });
    let gp = |oc: &OperatingCharacteristics| oc.generalized_power.expect("alternative truth");
    vec![
        within("no-borrowing power", none.efficacy_rate, 0.73, 0.045),
        within("no-borrowing gen. power", gp(&none), 0.69, 0.05),
        within("delta 0 power", d0.efficacy_rate, 0.90, 0.03),
        within("delta 0 gen. power", gp(&d0), 0.85, 0.04),
        within("delta 0 ESS", d0.ess, 463.6, 12.0),
        at_least("delta 0.5 power", d05.efficacy_rate, 0.99),
        within("delta 0.5 gen. power", gp(&d05), 0.64, 0.05),
    ]
}

fn criterion_5(r: &mut Runner) -> Vec<Check> {
    let mut configs = Vec::new();
    for n_t in [300, 500, 700] {
        configs.push(Select { n_t, ..BASE });
    }
    for delta in [-0.5, -0.1, 0.1, 0.5] {
        configs.push(Select { delta, ..BASE });
    }
    for mu in [0.3, 0.7] {
        configs.push(Select { mu, ..BASE });
    }
    let (mut t1_gap, mut gp_gap) = (0.0f64, 0.0f64);
    for s in configs {
        let lin = Select {
            method: Method::Linearized,
            ..s
        };
        let non = Select {
            method: Method::Nonlinear,
            ..s
        };
        let (a, b) = (r.borrowing("table2", lin), r.borrowing("table2", non));
        t1_gap = t1_gap.max((a.efficacy_rate - b.efficacy_rate).abs());
        let (a, b) = (r.borrowing("table4", lin), r.borrowing("table4", non));
        let gp = |oc: &OperatingCharacteristics| oc.generalized_power.expect("alternative truth");
        gp_gap = gp_gap.max((gp(&a) - gp(&b)).abs());
    }
    vec![
        at_most("max |type I difference| over 9 configurations", t1_gap, 0.015),
        at_most("max |gen. power difference| over 9 configurations", gp_gap, 0.02),
    ]
}

fn criterion_6(r: &mut Runner) -> Vec<Check> {
    let none_null = r.by_id("table5", "t5/none/null");
    let none_alt = r.by_id("table5", "t5/none/alt");
    let b_null = r.by_id("table5", "t5/borrow/null");
    let b_alt = r.by_id("table5", "t5/borrow/alt");
    let gp = b_alt.generalized_power.expect("alternative truth");
    let mut out = vec![
        within("no-borrowing type I", none_null.efficacy_rate, 0.06, 0.02),
        within("no-borrowing power", none_alt.efficacy_rate, 0.77, 0.04),
        within("no-borrowing ESS", none_alt.ess, 229.7, 8.0),
        within("borrowing type I", b_null.efficacy_rate, 0.01, 0.01),
        within("borrowing power", b_alt.efficacy_rate, 0.90, 0.03),
        within("borrowing gen. power", gp, 0.90, 0.03),
        within("borrowing futility", b_alt.futility_rate, 0.06, 0.02),
        within("borrowing ESS", b_alt.ess, 222.0, 8.0),
    ];
    for (tag, oc) in [("null", &b_null), ("alt", &b_alt)] {
        for (h, a) in oc.mean_a.iter().enumerate() {
            out.push(within(&format!("{tag} mean a_{}", h + 1), *a, 0.80, 0.03));
        }
    }
    out
}

fn criterion_7() -> Vec<Check> {
    let hooks = Hooks::default();
    let (z, cov) = validation::conjugate_sampler_errors(109);
    let jacobian = validation::jacobian_suite(hooks);
    vec![
        flag(&jacobian.detail, jacobian.passed),
        flag("logC(0) = 0", validation::zero_weight_normalizer_suite().passed),
        at_most(
            "closed form vs Monte Carlo, 101 nodes, M = 20000",
            validation::closed_form_vs_monte_carlo_gap(106),
            0.05,
        ),
        flag("a = 0 reduction", validation::zero_weight_posterior_suite().passed),
        at_most("conjugate sampler mean error in MC SEs", z, 3.0),
        at_most("conjugate sampler covariance relative error", cov, 0.10),
        at_most(
            "Beta(4, 1) prior KS sqrt(n) D",
            validation::beta_prior_ks(110),
            validation::KS_CRITICAL_1PCT,
        ),
        at_least("Taylor gap fraction within 0.05", validation::taylor_gap_fraction(1000, 105), 0.95),
    ]
}

/// Monte-Carlo `log E[exp(a * loglik(beta))]` under the baseline prior
/// with a Gaussian kernel summary likelihood written out here.
fn oracle_log_c(a: f64, row: &Vector4<f64>, m: f64, v: f64, prior_sd: f64, draws: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, &[0x5eed]);
    let vals: Vec<f64> = (0..draws)
        .map(|_| {
            let beta = Vector4::from_fn(|_, _| prior_sd * rng.sample::<f64, _>(StandardNormal));
            let r = m - row.dot(&beta);
            -0.5 * a * r * r / v
        })
        .collect();
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + (vals.iter().map(|x| (x - max).exp()).sum::<f64>() / draws as f64).ln()
}

/// The printed closed form, with the exponent factor selectable.
fn printed_form(a: f64, row: &Vector4<f64>, m: f64, v: f64, prior_sd: f64, factor: fn(f64) -> f64) -> f64 {
    let s = prior_sd * prior_sd * row.norm_squared();
    -0.5 * (1.0 + a * s / v).ln() - 0.5 * factor(a) * m * m / (v + a * s)
}

fn criterion_8() -> Vec<Check> {
    let prior_sd = 0.5;
    let prior = BaselinePrior::isotropic(prior_sd).expect("valid prior");
    let cases: Vec<(&str, HistoricalSummary, CoefficientVector)> = vec![
        (
            "identity",
            HistoricalSummary::scalar(
                1.5,
                0.5,
                MappingSpec::new(MappingKind::IdentityIdentity, 0.5).expect("valid"),
                BetaPrior::new(4.0, 1.0).expect("valid"),
            )
            .expect("valid"),
            CoefficientVector::new(0.0, 0.0, 0.0, 0.0),
        ),
        (
            "logit-logit linearized",
            make_historical_summary(
                &CoefficientVector::new(-0.2, 0.4, 0.0, 0.65),
                MappingSpec::new(MappingKind::LogitLogit, 0.5).expect("valid"),
                1.0,
                500,
                500,
                BetaPrior::new(4.0, 1.0).expect("valid"),
            )
            .expect("valid"),
            CoefficientVector::new(-0.2, 0.4, 0.0, 0.65),
        ),
    ];
    let mut engine_gap = 0.0f64;
    let mut linear_gap = 0.0f64;
    let mut squared_gap = 0.0f64;
    for (k, (_, summary, anchor)) in cases.iter().enumerate() {
        let lin = linearize_summary(summary, anchor).expect("anchor");
        let cf = ClosedFormNormalizer::new(std::slice::from_ref(&lin), &prior).expect("positive definite");
        // rewrite the linearized term as m - D beta with an offset folded into m
        let d = summary.jacobian(&anchor.betas()).expect("jacobian");
        let row = Vector4::new(d[(0, 0)], d[(0, 1)], d[(0, 2)], d[(0, 3)]);
        let h0 = summary.mapping_h(&anchor.betas()).expect("mapping")[0];
        let m = summary.m_delta()[0] - (h0 - row.dot(&anchor.betas()));
        let v = summary.sigma_delta()[(0, 0)];
        for i in 1..=9 {
            let a = i as f64 / 10.0;
            let mc = oracle_log_c(a, &row, m, v, prior_sd, 1_000_000, 80 + k as u64);
            engine_gap = engine_gap.max((cf.log_c(&[a]).expect("finite") - mc).abs());
            linear_gap = linear_gap.max((printed_form(a, &row, m, v, prior_sd, |a| a) - mc).abs());
            squared_gap = squared_gap.max((printed_form(a, &row, m, v, prior_sd, |a| a * a) - mc).abs());
        }
    }
    let validated = if linear_gap <= 0.02 && squared_gap > 0.02 {
        "a"
    } else if squared_gap <= 0.02 && linear_gap > 0.02 {
        "a^2"
    } else {
        "undetermined"
    };
    vec![
        at_most("engine closed form vs Monte Carlo over a = 0.1..0.9", engine_gap, 0.02),
        at_most("factor a form", linear_gap, 0.02),
        Check {
            label: format!("factor a^2 form misses by {squared_gap:.3}; validated exponent factor: {validated}"),
            pass: validated == "a",
        },
    ]
}

fn report(n: usize, title: &str, checks: &[Check]) -> bool {
    let pass = checks.iter().all(|c| c.pass);
    let mut line = format!("criterion {n} [{}] {title}:", if pass { "PASS" } else { "FAIL" });
    for (i, c) in checks.iter().enumerate() {
        let sep = if i == 0 { " " } else { "; " };
        let mark = if c.pass { "" } else { " FAILED" };
        write!(line, "{sep}{}{mark}", c.label).expect("string write");
    }
    println!("{line}");
    pass
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let started = Instant::now();
    let mut passed = [
        report(7, "property suite", &criterion_7()),
        report(8, "closed-form normalizer exponent", &criterion_8()),
    ]
    .to_vec();
    let mut r = Runner::new();
    eprintln!("acceptance: simulating with {} worker(s)", r.workers);
    passed.push(report(1, "null, no borrowing", &criterion_1(&mut r)));
    passed.push(report(2, "null, borrowing delta 0, n_t 500, linearized", &criterion_2(&mut r)));
    passed.push(report(3, "bias sweep under the null", &criterion_3(&mut r)));
    passed.push(report(4, "heterogeneous effect", &criterion_4(&mut r)));
    passed.push(report(5, "linearized vs nonlinear parity", &criterion_5(&mut r)));
    passed.push(report(6, "sleep apnea example", &criterion_6(&mut r)));
    let failed = passed.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} of {} criteria passed ({} scenarios simulated, {:.0} s)",
        passed.len() - failed,
        passed.len(),
        r.cache.len(),
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
