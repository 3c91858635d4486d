use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{partition_dirichlet, Batch, TaskError};

/// Parameters of a synthetic two-blob classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticSpec {
    pub samples: usize,
    pub dim: usize,
    pub clients: usize,
    /// Distance between the class means along a random unit direction.
    pub separation: f64,
    /// Variance of the log feature scales; 0 gives isotropic features.
    pub scale_variance: f64,
    /// Dirichlet concentration of the label split across clients.
    pub alpha: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LogisticSpec {
    fn default() -> Self {
        Self {
            samples: 2000,
            dim: 32,
            clients: 8,
            separation: 2.0,
            scale_variance: 1.0,
            alpha: 1.0,
            lambda: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// L2-regularized logistic regression with labels in `{-1, +1}` split into
/// client shards.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticTask {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
    shards: Vec<Vec<usize>>,
    lambda: f64,
    batch_size: usize,
}

impl LogisticTask {
    pub fn new(
        dim: usize,
        features: Vec<f64>,
        labels: Vec<f64>,
        shards: Vec<Vec<usize>>,
        lambda: f64,
        batch_size: usize,
    ) -> Result<Self, TaskError> {
        let n = labels.len();
        if dim == 0 || features.len() != n * dim {
            return Err(TaskError::DimensionMismatch {
                expected: n * dim,
                found: features.len(),
            });
        }
        if !(lambda >= 0.0) {
            return Err(TaskError::InvalidParameter(format!("lambda must be nonnegative, got {lambda}")));
        }
        if batch_size == 0 {
            return Err(TaskError::InvalidParameter("batch size must be at least 1".into()));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(TaskError::InvalidParameter("labels must be -1 or +1".into()));
        }
        let mut seen = vec![false; n];
        for shard in &shards {
            if shard.is_empty() {
                return Err(TaskError::InvalidParameter("empty shard".into()));
            }
            for &i in shard {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(TaskError::InvalidParameter(format!("sample {i} missing or assigned twice")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(TaskError::InvalidParameter("shards do not cover the dataset".into()));
        }
        Ok(Self {
            dim,
            features,
            labels,
            shards,
            lambda,
            batch_size,
        })
    }

    pub fn from_spec(spec: &LogisticSpec) -> Result<Self, TaskError> {
        if spec.samples == 0 || spec.dim == 0 {
            return Err(TaskError::InvalidParameter("samples and dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let mut direction: Vec<f64> = (0..spec.dim).map(|_| normal(&mut rng)).collect();
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        direction.iter_mut().for_each(|v| *v /= norm);
        let sd = spec.scale_variance.max(0.0).sqrt();
        let scales: Vec<f64> = (0..spec.dim).map(|_| (sd * normal(&mut rng)).exp()).collect();
        let mut features = Vec::with_capacity(spec.samples * spec.dim);
        let mut classes = Vec::with_capacity(spec.samples);
        for _ in 0..spec.samples {
            let class = usize::from(rng.random_bool(0.5));
            let sign = if class == 1 { 1.0 } else { -1.0 };
            for j in 0..spec.dim {
                let v = 0.5 * sign * spec.separation * direction[j] + normal(&mut rng);
                features.push(scales[j] * v);
            }
            classes.push(class);
        }
        let partition = partition_dirichlet(&classes, spec.clients, spec.alpha, spec.seed ^ 0xD1_41C7)?;
        let labels = classes.iter().map(|&c| if c == 1 { 1.0 } else { -1.0 }).collect();
        Self::new(spec.dim, features, labels, partition.shards(), spec.lambda, spec.batch_size)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, client: usize) -> &[usize] {
        &self.shards[client]
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn margin(&self, i: usize, w: &[f64]) -> f64 {
        self.labels[i] * self.row(i).iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }

    fn resolve<'a>(&'a self, client: usize, batch: &'a Batch) -> Result<Box<dyn Iterator<Item = usize> + 'a>, TaskError> {
        let shard = &self.shards[client];
        match batch {
            Batch::Full => Ok(Box::new(shard.iter().copied())),
            Batch::Positions(pos) => {
                if let Some(&bad) = pos.iter().find(|&&p| p >= shard.len()) {
                    return Err(TaskError::BatchOutOfRange {
                        client,
                        position: bad,
                        shard_len: shard.len(),
                    });
                }
                Ok(Box::new(pos.iter().map(move |&p| shard[p])))
            }
        }
    }

    fn regularizer(&self, w: &[f64]) -> f64 {
        0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn client_loss(&self, client: usize, w: &[f64], batch: &Batch) -> Result<f64, TaskError> {
        let mut total = 0.0;
        let mut count = 0usize;
        for i in self.resolve(client, batch)? {
            total += softplus(-self.margin(i, w));
            count += 1;
        }
        Ok(total / count as f64 + self.regularizer(w))
    }

    pub fn client_grad(&self, client: usize, w: &[f64], batch: &Batch) -> Result<Vec<f64>, TaskError> {
        let mut g = vec![0.0; self.dim];
        let mut count = 0usize;
        for i in self.resolve(client, batch)? {
            let coef = -self.labels[i] * sigmoid(-self.margin(i, w));
            for (gj, a) in g.iter_mut().zip(self.row(i)) {
                *gj += coef * a;
            }
            count += 1;
        }
        for (gj, wj) in g.iter_mut().zip(w) {
            *gj = *gj / count as f64 + self.lambda * wj;
        }
        Ok(g)
    }

    /// Average of the full-shard client losses.
    pub fn global_loss(&self, w: &[f64]) -> f64 {
        let m = self.num_clients() as f64;
        (0..self.num_clients())
            .map(|c| self.client_loss(c, w, &Batch::Full).expect("full batch"))
            .sum::<f64>()
            / m
    }

    pub fn global_grad(&self, w: &[f64]) -> Vec<f64> {
        let m = self.num_clients() as f64;
        let mut g = vec![0.0; self.dim];
        for c in 0..self.num_clients() {
            for (a, b) in g.iter_mut().zip(self.client_grad(c, w, &Batch::Full).expect("full batch")) {
                *a += b / m;
            }
        }
        g
    }

    /// Gauss-Newton diagonal of the global loss.
    pub fn hessian_diag(&self, w: &[f64]) -> Vec<f64> {
        let m = self.num_clients() as f64;
        let mut h = vec![0.0; self.dim];
        for shard in &self.shards {
            let n = shard.len() as f64;
            for &i in shard {
                let s = sigmoid(self.margin(i, w));
                let weight = s * (1.0 - s) / (n * m);
                for (hj, a) in h.iter_mut().zip(self.row(i)) {
                    *hj += weight * a * a;
                }
            }
        }
        h.iter_mut().for_each(|v| *v += self.lambda);
        h
    }

    /// `batch_size` distinct shard positions, or the full shard if it is smaller.
    pub fn sample_batch(&self, client: usize, seed: u64) -> Batch {
        let len = self.shards[client].len();
        if self.batch_size >= len {
            return Batch::Full;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut positions = rand::seq::index::sample(&mut rng, len, self.batch_size).into_vec();
        positions.sort_unstable();
        Batch::Positions(positions)
    }
}
