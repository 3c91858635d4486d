use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::TaskError;

/// Entries `exp(g_i)` with `g_i ~ N(0, variance)`.
pub fn make_lognormal_spectrum(dim: usize, variance: f64, seed: u64) -> Result<Vec<f64>, TaskError> {
    if dim == 0 {
        return Err(TaskError::InvalidParameter("dimension must be at least 1".into()));
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(TaskError::InvalidParameter(format!("variance must be positive, got {variance}")));
    }
    let sd = variance.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..dim)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            (sd * g).exp()
        })
        .collect())
}

/// Parameters of a synthetic quadratic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadraticSpec {
    pub dim: usize,
    /// Variance of the log-spectrum.
    pub variance: f64,
    pub clients: usize,
    /// Scale of the per-client center offsets.
    pub heterogeneity: f64,
    /// Apply a random orthogonal change of basis to the curvature.
    pub rotate: bool,
    pub seed: u64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        Self {
            dim: 200,
            variance: 3.0,
            clients: 8,
            heterogeneity: 0.0,
            rotate: false,
            seed: 0,
        }
    }
}

/// `f_i(x) = 1/2 (x - c_i)^T A (x - c_i)` with `A = Q diag(spectrum) Q^T`
/// (`Q = I` unless rotated) and `c_i = shift + offset_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    spectrum: Vec<f64>,
    rotation: Option<Vec<f64>>,
    shift: Vec<f64>,
    centers: Vec<Vec<f64>>,
    mean_center: Vec<f64>,
    curvature_diag: Vec<f64>,
}

impl QuadraticTask {
    pub fn new(
        spectrum: Vec<f64>,
        shift: Vec<f64>,
        offsets: Vec<Vec<f64>>,
        rotation: Option<Vec<f64>>,
    ) -> Result<Self, TaskError> {
        let d = spectrum.len();
        if d == 0 || offsets.is_empty() {
            return Err(TaskError::InvalidParameter("need at least one dimension and one client".into()));
        }
        if spectrum.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(TaskError::InvalidParameter("spectrum must be positive".into()));
        }
        if shift.len() != d || offsets.iter().any(|o| o.len() != d) {
            return Err(TaskError::DimensionMismatch {
                expected: d,
                found: shift.len(),
            });
        }
        if let Some(q) = &rotation {
            if q.len() != d * d {
                return Err(TaskError::DimensionMismatch {
                    expected: d * d,
                    found: q.len(),
                });
            }
        }
        let centers: Vec<Vec<f64>> = offsets
            .iter()
            .map(|o| shift.iter().zip(o).map(|(b, e)| b + e).collect())
            .collect();
        let m = centers.len() as f64;
        let mean_center = (0..d).map(|j| centers.iter().map(|c| c[j]).sum::<f64>() / m).collect();
        let curvature_diag = match &rotation {
            None => spectrum.clone(),
            Some(q) => (0..d)
                .map(|i| (0..d).map(|j| q[i * d + j] * q[i * d + j] * spectrum[j]).sum())
                .collect(),
        };
        Ok(Self {
            spectrum,
            rotation,
            shift,
            centers,
            mean_center,
            curvature_diag,
        })
    }

    pub fn from_spec(spec: &QuadraticSpec) -> Result<Self, TaskError> {
        if spec.clients == 0 {
            return Err(TaskError::InvalidParameter("clients must be at least 1".into()));
        }
        if !(spec.heterogeneity >= 0.0) {
            return Err(TaskError::InvalidParameter("heterogeneity must be nonnegative".into()));
        }
        let spectrum = make_lognormal_spectrum(spec.dim, spec.variance, spec.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED_0F_C3A7E5);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let shift: Vec<f64> = (0..spec.dim).map(|_| normal()).collect();
        let offsets = (0..spec.clients)
            .map(|_| (0..spec.dim).map(|_| spec.heterogeneity * normal()).collect())
            .collect();
        let rotation = spec.rotate.then(|| random_orthogonal(spec.dim, spec.seed ^ 0x0A7A_710E));
        Self::new(spectrum, shift, offsets, rotation)
    }

    pub fn dim(&self) -> usize {
        self.spectrum.len()
    }

    pub fn num_clients(&self) -> usize {
        self.centers.len()
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn is_rotated(&self) -> bool {
        self.rotation.is_some()
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn center(&self, client: usize) -> &[f64] {
        &self.centers[client]
    }

    /// Minimizer of the global loss.
    pub fn mean_center(&self) -> &[f64] {
        &self.mean_center
    }

    /// Largest eigenvalue `L`.
    pub fn lipschitz(&self) -> f64 {
        self.spectrum.iter().copied().fold(0.0, f64::max)
    }

    /// Diagonal of `A`.
    pub fn curvature_diag(&self) -> &[f64] {
        &self.curvature_diag
    }

    /// `1/2 (x - c)^T A (x - c)`.
    fn energy(&self, x: &[f64], c: &[f64]) -> f64 {
        let d = self.dim();
        let r: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
        match &self.rotation {
            None => 0.5 * r.iter().zip(&self.spectrum).map(|(ri, s)| s * ri * ri).sum::<f64>(),
            Some(q) => {
                let mut e = 0.0;
                for j in 0..d {
                    let y: f64 = (0..d).map(|i| q[i * d + j] * r[i]).sum();
                    e += self.spectrum[j] * y * y;
                }
                0.5 * e
            }
        }
    }

    /// `A (x - c)`.
    fn apply(&self, x: &[f64], c: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let r: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
        match &self.rotation {
            None => r.iter().zip(&self.spectrum).map(|(ri, s)| s * ri).collect(),
            Some(q) => {
                let y: Vec<f64> = (0..d)
                    .map(|j| self.spectrum[j] * (0..d).map(|i| q[i * d + j] * r[i]).sum::<f64>())
                    .collect();
                (0..d).map(|i| (0..d).map(|j| q[i * d + j] * y[j]).sum()).collect()
            }
        }
    }

    pub fn client_loss(&self, client: usize, x: &[f64]) -> f64 {
        self.energy(x, &self.centers[client])
    }

    pub fn client_grad(&self, client: usize, x: &[f64]) -> Vec<f64> {
        self.apply(x, &self.centers[client])
    }

    /// Average of the client losses.
    pub fn global_loss(&self, x: &[f64]) -> f64 {
        let m = self.num_clients() as f64;
        (0..self.num_clients()).map(|i| self.client_loss(i, x)).sum::<f64>() / m
    }

    pub fn global_grad(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x, &self.mean_center)
    }

    /// `F(x) - F*`, computed without cancellation.
    pub fn suboptimality(&self, x: &[f64]) -> f64 {
        self.energy(x, &self.mean_center)
    }
}

/// A random orthogonal matrix (row-major) from `dim` Householder reflections.
pub fn random_orthogonal(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = vec![0.0; dim * dim];
    for i in 0..dim {
        q[i * dim + i] = 1.0;
    }
    for _ in 0..dim {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm2: f64 = v.iter().map(|x| x * x).sum();
        // q <- q (I - 2 v v^T / |v|^2)
        for row in q.chunks_exact_mut(dim) {
            let dot: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            let s = 2.0 * dot / norm2;
            for (a, b) in row.iter_mut().zip(&v) {
                *a -= s * b;
            }
        }
    }
    q
}
