use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NppError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("singular mapping: inverse-link cell predictor {value:e} is too close to zero")]
    SingularMapping { value: f64 },

    #[error("degenerate marginal: marginal risk {value:e} is too close to 0 or 1")]
    DegenerateMarginal { value: f64 },

    #[error("non-PSD system: {0}")]
    NonPsdSystem(String),

    #[error("borrowing weight {value} is outside the interpolation range [0, 1]")]
    OutOfRange { value: f64 },

    #[error("empty subspace sample: no enrolled subject has a biomarker level in {0:?}")]
    EmptySubspaceSample(Vec<u8>),

    #[error("initialization failure: no finite-density start found after {attempts} attempts")]
    InitializationFailure { attempts: usize },

    #[error("non-finite density in chain {chain} at iteration {iteration}")]
    NonFiniteDensity { chain: usize, iteration: usize },

    #[error("scenario {scenario}: {failed} of {total} replicates failed (limit is 1%)")]
    ScenarioFailed {
        scenario: String,
        failed: usize,
        total: usize,
    },
}

pub type Result<T> = std::result::Result<T, NppError>;
