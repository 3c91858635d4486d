use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::TaskError;

const MAX_ATTEMPTS: usize = 1000;

/// Assignment of every sample to exactly one client, no client left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPartition {
    pub alpha: f64,
    pub num_clients: usize,
    /// `assignment[sample] = client`.
    pub assignment: Vec<usize>,
}

impl DirichletPartition {
    /// Sample indices of each client, ascending.
    pub fn shards(&self) -> Vec<Vec<usize>> {
        let mut shards = vec![Vec::new(); self.num_clients];
        for (sample, &client) in self.assignment.iter().enumerate() {
            shards[client].push(sample);
        }
        shards
    }
}

/// Splits each class across `clients` with proportions drawn from
/// `Dirichlet(alpha, ..., alpha)`, redrawing until no client is empty.
pub fn partition_dirichlet(labels: &[usize], clients: usize, alpha: f64, seed: u64) -> Result<DirichletPartition, TaskError> {
    if clients == 0 {
        return Err(TaskError::InvalidParameter("clients must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(TaskError::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    if labels.len() < clients {
        return Err(TaskError::TooFewSamples {
            samples: labels.len(),
            clients,
        });
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| TaskError::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    for _ in 0..MAX_ATTEMPTS {
        let mut sizes = vec![0usize; clients];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let weights: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = weights.iter().sum();
            if !(total > 0.0) {
                continue;
            }
            let n = members.len();
            let mut cumulative = 0.0;
            let mut start = 0;
            for (client, w) in weights.iter().enumerate() {
                cumulative += w / total;
                let end = if client + 1 == clients {
                    n
                } else {
                    ((cumulative * n as f64).round() as usize).clamp(start, n)
                };
                for &sample in &members[start..end] {
                    assignment[sample] = client;
                }
                sizes[client] += end - start;
                start = end;
            }
        }
        if sizes.iter().all(|&s| s > 0) {
            return Ok(DirichletPartition {
                alpha,
                num_clients: clients,
                assignment,
            });
        }
    }
    Err(TaskError::PartitionExhausted { attempts: MAX_ATTEMPTS })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class_labels(per_class: usize) -> Vec<usize> {
        (0..2 * per_class).map(|i| i % 2).collect()
    }

    #[test]
    fn huge_alpha_is_nearly_uniform() {
        let labels = two_class_labels(10_000);
        let p = partition_dirichlet(&labels, 10, 1e6, 3).unwrap();
        for class in 0..2 {
            let mut counts = [0usize; 10];
            for (i, &c) in p.assignment.iter().enumerate() {
                if labels[i] == class {
                    counts[c] += 1;
                }
            }
            for count in counts {
                let share = count as f64 / 10_000.0;
                assert!((share - 0.1).abs() <= 0.05 * 0.1, "share {share}");
            }
        }
    }

    #[test]
    fn sixty_four_clients_non_empty() {
        let labels: Vec<usize> = (0..5000).map(|i| i % 10).collect();
        let p = partition_dirichlet(&labels, 64, 1.0, 1).unwrap();
        let shards = p.shards();
        assert_eq!(shards.len(), 64);
        assert!(shards.iter().all(|s| !s.is_empty()));
        assert_eq!(shards.iter().map(Vec::len).sum::<usize>(), 5000);
    }

    #[test]
    fn deterministic_given_seed() {
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let a = partition_dirichlet(&labels, 7, 0.5, 9).unwrap();
        let b = partition_dirichlet(&labels, 7, 0.5, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fewer_samples_than_clients() {
        assert!(matches!(
            partition_dirichlet(&[0, 1], 3, 1.0, 0),
            Err(TaskError::TooFewSamples { samples: 2, clients: 3 })
        ));
    }
}
