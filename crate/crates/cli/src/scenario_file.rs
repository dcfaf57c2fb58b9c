//! TOML scenario files.
//!
//! A file holds one or more `[[scenario]]` tables. Fields marked as
//! sweepable accept either a value or a list; a scenario expands into the
//! Cartesian product of its lists. The product is ordered by field
//! declaration, the first declared field varying slowest: `method` first,
//! then for each summary in order `n_t`, `delta`, `mu_x_hist`.

use std::fmt;
use std::path::Path;

use enrich_npp::{
    BaselinePrior, BetaPrior, CoefficientVector, DesignConfig, InverseGamma, MappingKind, MappingSpec,
    NormalizationMethod, OutcomeFamily, SamplerConfig, ScenarioConfig, SummarySource,
};
use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// A single value or a list of values to sweep over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

impl<T> From<T> for OneOrMany<T> {
    fn from(v: T) -> Self {
        OneOrMany::One(v)
    }
}

/// Implementation of the borrowing analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Taylor-linearized summary likelihood, closed-form normalizer.
    Linearized,
    /// Exact mapping, Monte-Carlo normalizer on a weight grid.
    Nonlinear,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Linearized => "linearized",
            Method::Nonlinear => "nonlinear",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    /// Prior standard deviation of every coefficient.
    #[serde(default = "default_prior_sd")]
    pub sd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<[f64; 4]>,
    /// Inverse-gamma prior on the Gaussian residual variance.
    #[serde(default = "default_ig")]
    pub sigma2_shape: f64,
    #[serde(default = "default_ig")]
    pub sigma2_scale: f64,
}

fn default_prior_sd() -> f64 {
    5.0
}

fn default_ig() -> f64 {
    2.0
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            sd: default_prior_sd(),
            mean: None,
            sigma2_shape: default_ig(),
            sigma2_scale: default_ig(),
        }
    }
}

impl PriorSpec {
    pub fn build(&self) -> enrich_npp::Result<BaselinePrior> {
        let mean = Vector4::from(self.mean.unwrap_or([0.0; 4]));
        let cov = Matrix4::identity() * (self.sd * self.sd);
        BaselinePrior::new(mean, cov, InverseGamma::new(self.sigma2_shape, self.sigma2_scale)?)
    }
}

/// Monte-Carlo normalizer settings used by the nonlinear method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_draws")]
    pub mc_draws: usize,
}

fn default_nodes() -> usize {
    101
}

fn default_draws() -> usize {
    20_000
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nodes: default_nodes(),
            mc_draws: default_draws(),
        }
    }
}

fn default_a_prior() -> BetaPrior {
    BetaPrior { eta: 4.0, nu: 1.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SummarySpec {
    /// Summary implied by the scenario truth plus a bias; `n_t = 0` turns
    /// borrowing off.
    Generated {
        mapping: MappingKind,
        n_t: OneOrMany<u32>,
        #[serde(default = "zero_delta")]
        delta: OneOrMany<f64>,
        #[serde(default = "half_prevalence")]
        mu_x_hist: OneOrMany<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_c: Option<u32>,
        #[serde(default = "default_a_prior")]
        a_prior: BetaPrior,
    },
    /// A published scalar estimate and its variance.
    Reported {
        mapping: MappingKind,
        estimate: f64,
        variance: f64,
        #[serde(default = "half_prevalence")]
        mu_x_hist: OneOrMany<f64>,
        #[serde(default = "default_a_prior")]
        a_prior: BetaPrior,
    },
}

fn zero_delta() -> OneOrMany<f64> {
    OneOrMany::One(0.0)
}

fn half_prevalence() -> OneOrMany<f64> {
    OneOrMany::One(0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub id: String,
    pub family: OutcomeFamily,
    /// `[beta0, beta1, beta2, beta3]`.
    pub beta_true: [f64; 4],
    /// Residual standard deviation of the Gaussian truth.
    #[serde(default = "unit_sigma")]
    pub sigma_true: f64,
    #[serde(default = "default_method")]
    pub method: OneOrMany<Method>,
    #[serde(default = "half")]
    pub prevalence: f64,
    #[serde(default = "half")]
    pub rand_ratio: f64,
    pub n_reps: usize,
    pub base_seed: u64,
    pub design: DesignConfig,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default, rename = "summary", skip_serializing_if = "Vec::is_empty")]
    pub summaries: Vec<SummarySpec>,
}

fn unit_sigma() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn default_method() -> OneOrMany<Method> {
    OneOrMany::One(Method::Linearized)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(rename = "scenario")]
    pub scenarios: Vec<ScenarioSpec>,
}

/// Swept values that identify an expanded scenario in output tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioLabels {
    pub method: Method,
    /// Historical treated-arm size of the first summary; 0 when borrowing
    /// is off; absent for reported summaries.
    pub n_t: Option<u32>,
    pub delta: Option<f64>,
    pub mu_x_hist: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpandedScenario {
    pub labels: ScenarioLabels,
    pub config: ScenarioConfig,
    /// Monte-Carlo settings from the file, used by `logc` whatever the method.
    pub mc_grid: NormalizationMethod,
}

/// One concrete choice for each sweepable summary field.
#[derive(Debug, Clone, Copy)]
struct SummaryPoint {
    n_t: u32,
    delta: f64,
    mu: f64,
}

fn summary_axes(s: &SummarySpec) -> Vec<SummaryPoint> {
    let (n_ts, deltas, mus) = match s {
        SummarySpec::Generated {
            n_t, delta, mu_x_hist, ..
        } => (n_t.values(), delta.values(), mu_x_hist.values()),
        SummarySpec::Reported { mu_x_hist, .. } => (vec![0], vec![0.0], mu_x_hist.values()),
    };
    let mut out = Vec::new();
    for &n_t in &n_ts {
        for &delta in &deltas {
            for &mu in &mus {
                out.push(SummaryPoint { n_t, delta, mu });
            }
        }
    }
    out
}

fn is_swept(s: &SummarySpec) -> [bool; 3] {
    match s {
        SummarySpec::Generated {
            n_t, delta, mu_x_hist, ..
        } => [n_t.values().len() > 1, delta.values().len() > 1, mu_x_hist.values().len() > 1],
        SummarySpec::Reported { mu_x_hist, .. } => [false, false, mu_x_hist.values().len() > 1],
    }
}

impl ScenarioSpec {
    /// Expands the sweeps into concrete scenarios.
    pub fn expand(&self) -> Result<Vec<ExpandedScenario>, CliError> {
        let methods = self.method.values();
        if methods.is_empty() {
            return Err(CliError::Config(format!("scenario `{}`: method list is empty", self.id)));
        }
        let axes: Vec<Vec<SummaryPoint>> = self.summaries.iter().map(summary_axes).collect();
        if axes.iter().any(Vec::is_empty) {
            return Err(CliError::Config(format!("scenario `{}`: empty sweep list", self.id)));
        }
        let mut combos: Vec<Vec<SummaryPoint>> = vec![Vec::new()];
        for axis in &axes {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |p| {
                        let mut c = prefix.clone();
                        c.push(*p);
                        c
                    })
                })
                .collect();
        }

        let mut out = Vec::new();
        for &method in &methods {
            for combo in &combos {
                out.push(self.concretize(method, methods.len() > 1, combo)?);
            }
        }
        Ok(out)
    }

    fn concretize(&self, method: Method, method_swept: bool, point: &[SummaryPoint]) -> Result<ExpandedScenario, CliError> {
        let ctx = |e: enrich_npp::NppError| CliError::Config(format!("scenario `{}`: {e}", self.id));
        let mut id = self.id.clone();
        let mut summaries = Vec::new();
        for (k, (spec, p)) in self.summaries.iter().zip(point).enumerate() {
            let swept = is_swept(spec);
            let tag = if self.summaries.len() > 1 { format!("{}", k + 1) } else { String::new() };
            if swept[0] {
                id.push_str(&format!("/n_t{tag}={}", p.n_t));
            }
            if swept[1] {
                id.push_str(&format!("/delta{tag}={}", p.delta));
            }
            if swept[2] {
                id.push_str(&format!("/mu{tag}={}", p.mu));
            }
            let source = match spec {
                SummarySpec::Generated { mapping, n_c, a_prior, .. } => SummarySource::Generated {
                    mapping: *mapping,
                    mu_x_hist: p.mu,
                    delta_bias: p.delta,
                    n_t: p.n_t,
                    n_c: *n_c,
                    a_prior: *a_prior,
                },
                SummarySpec::Reported {
                    mapping,
                    estimate,
                    variance,
                    a_prior,
                    ..
                } => SummarySource::Reported {
                    estimate: vec![*estimate],
                    covariance: vec![vec![*variance]],
                    mappings: vec![MappingSpec::new(*mapping, p.mu).map_err(ctx)?],
                    a_prior: *a_prior,
                },
            };
            summaries.push(source);
        }
        if method_swept {
            id.push_str(&format!("/{method}"));
        }

        let mc_grid = NormalizationMethod::monte_carlo(self.grid.nodes, self.grid.mc_draws);
        let normalization = match method {
            Method::Linearized => NormalizationMethod::ClosedFormLinearized,
            Method::Nonlinear => mc_grid.clone(),
        };
        let [b0, b1, b2, b3] = self.beta_true;
        let config = ScenarioConfig {
            id,
            family: self.family,
            beta_true: CoefficientVector::new(b0, b1, b2, b3).with_sigma(self.sigma_true),
            prevalence: self.prevalence,
            rand_ratio: self.rand_ratio,
            design: self.design.clone(),
            prior: self.prior.build().map_err(ctx)?,
            summaries,
            normalization,
            linearized: method == Method::Linearized,
            sampler: self.sampler,
            n_reps: self.n_reps,
            base_seed: self.base_seed,
        };
        config.validate().map_err(ctx)?;

        let first = self.summaries.first().zip(point.first());
        let labels = ScenarioLabels {
            method,
            n_t: first.and_then(|(s, p)| matches!(s, SummarySpec::Generated { .. }).then_some(p.n_t)),
            delta: first.and_then(|(s, p)| matches!(s, SummarySpec::Generated { .. }).then_some(p.delta)),
            mu_x_hist: first.map(|(_, p)| p.mu),
        };
        Ok(ExpandedScenario { labels, config, mc_grid })
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if file.scenarios.is_empty() {
            return Err(CliError::Config("no [[scenario]] tables".into()));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Every concrete scenario in file order.
    pub fn expand(&self) -> Result<Vec<ExpandedScenario>, CliError> {
        let mut out = Vec::new();
        for s in &self.scenarios {
            out.extend(s.expand()?);
        }
        Ok(out)
    }
}
