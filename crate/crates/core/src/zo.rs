//! Forward-difference zeroth-order gradient scalars and Hessian-informed
//! perturbation directions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which of the two loss evaluations of a forward difference failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evaluation {
    Base,
    Perturbed,
}

impl std::fmt::Display for Evaluation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Evaluation::Base => f.write_str("f(x)"),
            Evaluation::Perturbed => f.write_str("f(x + mu z)"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZoError {
    #[error("non-finite loss {value} at {evaluation}")]
    NonFiniteLoss { evaluation: Evaluation, value: f64 },
    #[error("non-finite gradient scalar {0}")]
    NonFiniteScalar(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("curvature entry {index} is {value}, must be strictly positive")]
    CurvatureViolation { index: usize, value: f64 },
    #[error("at least one perturbation is required")]
    EmptyPerturbations,
    #[error("{scalars} scalars but {directions} directions")]
    ArityMismatch { scalars: usize, directions: usize },
    #[error("smoothing parameter must be positive and finite, got {0}")]
    InvalidSmoothing(f64),
}

/// Perturbation step size `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SmoothingParams {
    mu: f64,
}

impl SmoothingParams {
    pub const DEFAULT_MU: f64 = 1e-3;

    pub fn new(mu: f64) -> Result<Self, ZoError> {
        if mu > 0.0 && mu.is_finite() {
            Ok(Self { mu })
        } else {
            Err(ZoError::InvalidSmoothing(mu))
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self { mu: Self::DEFAULT_MU }
    }
}

impl TryFrom<f64> for SmoothingParams {
    type Error = ZoError;
    fn try_from(mu: f64) -> Result<Self, ZoError> {
        Self::new(mu)
    }
}

impl From<SmoothingParams> for f64 {
    fn from(s: SmoothingParams) -> f64 {
        s.mu
    }
}

/// Finite directional-derivative estimate `g`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct GradScalar(f64);

impl GradScalar {
    pub fn new(value: f64) -> Result<Self, ZoError> {
        if value.is_finite() {
            Ok(Self(value))
        } else {
            Err(ZoError::NonFiniteScalar(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A perturbation direction `z`; equal to `u` when the preconditioner is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction(Vec<f64>);

impl Direction {
    pub fn new(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `g = (loss(x + mu z) - loss(x)) / mu`.
///
/// `loss` must evaluate the same stochastic function (same batch) on both calls.
pub fn rge_scalar<F>(mut loss: F, x: &[f64], z: &Direction, smoothing: SmoothingParams) -> Result<GradScalar, ZoError>
where
    F: FnMut(&[f64]) -> f64,
{
    if z.len() != x.len() {
        return Err(ZoError::DimensionMismatch {
            expected: x.len(),
            found: z.len(),
        });
    }
    let mu = smoothing.mu();
    let base = loss(x);
    if !base.is_finite() {
        return Err(ZoError::NonFiniteLoss {
            evaluation: Evaluation::Base,
            value: base,
        });
    }
    let shifted: Vec<f64> = x.iter().zip(z.as_slice()).map(|(xi, zi)| xi + mu * zi).collect();
    let perturbed = loss(&shifted);
    if !perturbed.is_finite() {
        return Err(ZoError::NonFiniteLoss {
            evaluation: Evaluation::Perturbed,
            value: perturbed,
        });
    }
    GradScalar::new((perturbed - base) / mu)
}

/// `z_i = u_i / sqrt(h_i)` for a diagonal curvature estimate `h`.
pub fn hessian_informed_direction(diag: &[f64], mut u: Vec<f64>) -> Result<Direction, ZoError> {
    if diag.len() != u.len() {
        return Err(ZoError::DimensionMismatch {
            expected: diag.len(),
            found: u.len(),
        });
    }
    if let Some((index, &value)) = diag.iter().enumerate().find(|(_, h)| !(**h > 0.0)) {
        return Err(ZoError::CurvatureViolation { index, value });
    }
    for (ui, hi) in u.iter_mut().zip(diag) {
        *ui /= hi.sqrt();
    }
    Ok(Direction(u))
}

/// `g * z`.
pub fn step_delta(g: GradScalar, z: &Direction) -> Vec<f64> {
    z.as_slice().iter().map(|zi| g.0 * zi).collect()
}

/// `(1/P) sum_p g_p z_p`, accumulated in ascending `p`.
pub fn multi_perturbation_delta(scalars: &[GradScalar], directions: &[Direction]) -> Result<Vec<f64>, ZoError> {
    if scalars.is_empty() || directions.is_empty() {
        return Err(ZoError::EmptyPerturbations);
    }
    if scalars.len() != directions.len() {
        return Err(ZoError::ArityMismatch {
            scalars: scalars.len(),
            directions: directions.len(),
        });
    }
    let dim = directions[0].len();
    let mut acc = vec![0.0; dim];
    for (g, z) in scalars.iter().zip(directions) {
        if z.len() != dim {
            return Err(ZoError::DimensionMismatch {
                expected: dim,
                found: z.len(),
            });
        }
        for (a, zi) in acc.iter_mut().zip(z.as_slice()) {
            *a += g.0 * zi;
        }
    }
    let count = scalars.len() as f64;
    for a in &mut acc {
        *a /= count;
    }
    Ok(acc)
}
