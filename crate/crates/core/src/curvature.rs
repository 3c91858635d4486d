//! Diagonal curvature estimate learned from squared global deltas, plus the
//! variance diagnostics used to judge how well it whitens a known Hessian.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurvatureError {
    #[error("smoothing weight nu must lie in [0, 1], got {0}")]
    InvalidNu(f64),
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("clipping bounds must satisfy 0 < lower <= upper, got [{lower}, {upper}]")]
    InvalidBounds { lower: f64, upper: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("curvature scale L must be positive, got {0}")]
    InvalidScale(f64),
    #[error("true curvature entry {index} is {value}, must be nonnegative")]
    NegativeCurvature { index: usize, value: f64 },
    #[error("dimension must be at least 1")]
    EmptyDimension,
}

/// EMA weight, floor and clipping bounds of the learned diagonal Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HessianConfig {
    pub nu: f64,
    pub epsilon: f64,
    pub beta_lower: f64,
    pub beta_upper: f64,
}

impl Default for HessianConfig {
    fn default() -> Self {
        Self {
            nu: 0.05,
            epsilon: 1e-8,
            beta_lower: 1e-6,
            beta_upper: 1e6,
        }
    }
}

impl HessianConfig {
    pub fn validate(&self) -> Result<(), CurvatureError> {
        if !(0.0..=1.0).contains(&self.nu) {
            return Err(CurvatureError::InvalidNu(self.nu));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CurvatureError::InvalidEpsilon(self.epsilon));
        }
        if !(self.beta_lower > 0.0 && self.beta_lower <= self.beta_upper && self.beta_upper.is_finite()) {
            return Err(CurvatureError::InvalidBounds {
                lower: self.beta_lower,
                upper: self.beta_upper,
            });
        }
        Ok(())
    }
}

/// Strictly positive diagonal curvature estimate `H`, kept inside
/// `[beta_lower, beta_upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagHessian {
    diag: Vec<f64>,
    config: HessianConfig,
}

impl DiagHessian {
    pub fn identity(dim: usize, config: HessianConfig) -> Result<Self, CurvatureError> {
        Self::from_diag(vec![1.0; dim], config)
    }

    /// Builds an estimate from explicit entries, clipped into the configured bounds.
    pub fn from_diag(mut diag: Vec<f64>, config: HessianConfig) -> Result<Self, CurvatureError> {
        config.validate()?;
        if diag.is_empty() {
            return Err(CurvatureError::EmptyDimension);
        }
        for h in &mut diag {
            *h = h.clamp(config.beta_lower, config.beta_upper);
        }
        Ok(Self { diag, config })
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn config(&self) -> &HessianConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `h_i <- clip((1 - nu) h_i + nu (delta_i^2 + eps), beta_lower, beta_upper)`.
    pub fn ema_update(&self, delta: &[f64]) -> Result<Self, CurvatureError> {
        let mut next = self.clone();
        next.ema_update_in_place(delta)?;
        Ok(next)
    }

    pub(crate) fn ema_update_in_place(&mut self, delta: &[f64]) -> Result<(), CurvatureError> {
        if delta.len() != self.diag.len() {
            return Err(CurvatureError::DimensionMismatch {
                expected: self.diag.len(),
                found: delta.len(),
            });
        }
        let HessianConfig {
            nu,
            epsilon,
            beta_lower,
            beta_upper,
        } = self.config;
        if nu == 0.0 {
            return Ok(());
        }
        let keep = 1.0 - nu;
        for (h, d) in self.diag.iter_mut().zip(delta) {
            let target = d * d + epsilon;
            *h = (keep * *h + nu * target).clamp(beta_lower, beta_upper);
        }
        Ok(())
    }

    /// `1 / sqrt(h_i)`, each within `[beta_upper^-1/2, beta_lower^-1/2]`.
    pub fn inv_sqrt(&self) -> Vec<f64> {
        self.diag.iter().map(|h| 1.0 / h.sqrt()).collect()
    }

    pub fn summary(&self) -> HessianSummary {
        HessianSummary::of(&self.diag)
    }
}

/// Distribution summary of the diagonal entries, emitted once per round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianSummary {
    pub min: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
    pub mean: f64,
}

impl HessianSummary {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        // nearest-rank quantile
        let q = |p: f64| sorted[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            min: sorted[0],
            p10: q(0.1),
            p50: q(0.5),
            p90: q(0.9),
            max: sorted[n - 1],
            mean: sorted.iter().sum::<f64>() / n as f64,
        }
    }
}

/// Effective rank, whitening rank and spectral norm of the whitened Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureDiagnostics {
    /// `kappa = sum(sigma) / L`.
    pub effective_rank_kappa: f64,
    /// `zeta = sum(sigma_i / h_i)`.
    pub whitening_rank_zeta: f64,
    /// `max(sigma_i / h_i)`.
    pub spectral_term: f64,
}

/// Diagnostics of `h` against a known diagonal curvature `sigma` with scale `l`.
pub fn diagnostics(h: &[f64], sigma: &[f64], l: f64) -> Result<CurvatureDiagnostics, CurvatureError> {
    if !(l > 0.0) {
        return Err(CurvatureError::InvalidScale(l));
    }
    if h.len() != sigma.len() {
        return Err(CurvatureError::DimensionMismatch {
            expected: h.len(),
            found: sigma.len(),
        });
    }
    if let Some((index, &value)) = sigma.iter().enumerate().find(|(_, s)| !(**s >= 0.0)) {
        return Err(CurvatureError::NegativeCurvature { index, value });
    }
    let mut trace = 0.0;
    let mut zeta = 0.0;
    let mut spectral = 0.0f64;
    for (s, hi) in sigma.iter().zip(h) {
        trace += s;
        zeta += s / hi;
        spectral = spectral.max(s / hi);
    }
    Ok(CurvatureDiagnostics {
        effective_rank_kappa: trace / l,
        whitening_rank_zeta: zeta,
        spectral_term: spectral,
    })
}

/// `E[z z^T W z z^T] = Tr(W Lambda) Lambda + 2 Lambda W Lambda` for
/// `z ~ N(0, Lambda)` with diagonal `Lambda`; `w` is row-major and symmetric.
pub fn gaussian_fourth_moment(lambda: &[f64], w: &[f64]) -> Vec<f64> {
    let d = lambda.len();
    assert_eq!(w.len(), d * d, "W must be d x d");
    let trace: f64 = (0..d).map(|i| w[i * d + i] * lambda[i]).sum();
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let diag = if i == j { trace * lambda[i] } else { 0.0 };
            out[i * d + j] = diag + 2.0 * lambda[i] * w[i * d + j] * lambda[j];
        }
    }
    out
}
