use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{NppError, Result};

/// Inverse-gamma prior on the residual variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGamma {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && scale > 0.0) {
            return Err(NppError::InvalidParameter(format!(
                "inverse-gamma shape and scale must be positive, got ({shape}, {scale})"
            )));
        }
        Ok(Self { shape, scale })
    }

    /// Log density of `sigma` when `sigma^2` follows this prior, up to a
    /// constant.
    pub fn log_density_sigma(&self, sigma: f64) -> f64 {
        -(2.0 * self.shape + 1.0) * sigma.ln() - self.scale / (sigma * sigma)
    }

    pub fn d_log_density_sigma(&self, sigma: f64) -> f64 {
        -(2.0 * self.shape + 1.0) / sigma + 2.0 * self.scale / (sigma * sigma * sigma)
    }
}

/// Gaussian baseline prior on the four regression coefficients, plus the
/// residual-variance prior used by the Gaussian family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BaselinePriorRepr", into = "BaselinePriorRepr")]
pub struct BaselinePrior {
    m0: Vector4<f64>,
    sigma0: Matrix4<f64>,
    sigma2: InverseGamma,
    chol_l: Matrix4<f64>,
    precision: Matrix4<f64>,
    log_det: f64,
}

#[derive(Serialize, Deserialize)]
struct BaselinePriorRepr {
    mean: [f64; 4],
    covariance: [[f64; 4]; 4],
    sigma2: InverseGamma,
}

impl TryFrom<BaselinePriorRepr> for BaselinePrior {
    type Error = NppError;

    fn try_from(r: BaselinePriorRepr) -> Result<Self> {
        let cov = Matrix4::from_fn(|i, j| r.covariance[i][j]);
        BaselinePrior::new(Vector4::from(r.mean), cov, r.sigma2)
    }
}

impl From<BaselinePrior> for BaselinePriorRepr {
    fn from(p: BaselinePrior) -> Self {
        let mut covariance = [[0.0; 4]; 4];
        for (i, row) in covariance.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = p.sigma0[(i, j)];
            }
        }
        Self {
            mean: [p.m0[0], p.m0[1], p.m0[2], p.m0[3]],
            covariance,
            sigma2: p.sigma2,
        }
    }
}

impl BaselinePrior {
    pub fn new(m0: Vector4<f64>, sigma0: Matrix4<f64>, sigma2: InverseGamma) -> Result<Self> {
        if (sigma0 - sigma0.transpose()).abs().max() > 1e-12 * sigma0.abs().max() {
            return Err(NppError::InvalidParameter("prior covariance is not symmetric".into()));
        }
        let chol = sigma0
            .cholesky()
            .ok_or_else(|| NppError::InvalidParameter("prior covariance is not positive definite".into()))?;
        let chol_l = chol.l();
        let log_det = 2.0 * (0..4).map(|i| chol_l[(i, i)].ln()).sum::<f64>();
        let precision = chol.inverse();
        InverseGamma::new(sigma2.shape, sigma2.scale)?;
        Ok(Self {
            m0,
            sigma0,
            sigma2,
            chol_l,
            precision,
            log_det,
        })
    }

    /// Independent `N(0, sd^2)` priors on all coefficients with `IG(2, 2)`
    /// on the residual variance.
    pub fn isotropic(sd: f64) -> Result<Self> {
        Self::new(
            Vector4::zeros(),
            Matrix4::identity() * (sd * sd),
            InverseGamma::new(2.0, 2.0)?,
        )
    }

    pub fn with_sigma2(mut self, sigma2: InverseGamma) -> Self {
        self.sigma2 = sigma2;
        self
    }

    pub fn mean(&self) -> &Vector4<f64> {
        &self.m0
    }

    pub fn covariance(&self) -> &Matrix4<f64> {
        &self.sigma0
    }

    pub fn cholesky_l(&self) -> &Matrix4<f64> {
        &self.chol_l
    }

    pub fn precision(&self) -> &Matrix4<f64> {
        &self.precision
    }

    pub fn sigma2(&self) -> InverseGamma {
        self.sigma2
    }

    pub fn log_density_grad(&self, beta: &Vector4<f64>, grad: &mut Vector4<f64>) -> f64 {
        let d = beta - self.m0;
        let pd = self.precision * d;
        *grad = -pd;
        -0.5 * (4.0 * (2.0 * std::f64::consts::PI).ln() + self.log_det + d.dot(&pd))
    }

    pub fn log_density(&self, beta: &Vector4<f64>) -> f64 {
        let mut g = Vector4::zeros();
        self.log_density_grad(beta, &mut g)
    }
}
