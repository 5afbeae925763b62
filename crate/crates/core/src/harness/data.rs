use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::TaskConfig;
use crate::selection::{derive_seed, seeded_rng, uniform_below};
use crate::tensor::{Matrix, Real};

/// A labelled batch: one sample per column of `x`.
#[derive(Debug, Clone)]
pub struct Batch<T: Real> {
    pub x: Matrix<T>,
    pub labels: Vec<usize>,
}

/// Gaussian-cluster classification data.
///
/// All randomness derives from one data seed: ordinal 0 draws the cluster
/// means, ordinal 1 the held-out set, ordinal 2 the training stream. The
/// pretraining stream and the shift directions use ordinals 4 and 5.
#[derive(Debug, Clone)]
pub struct GaussianClusters {
    dim: usize,
    noise: f64,
    means: Vec<Vec<f64>>,
}

impl GaussianClusters {
    pub fn new(task: &TaskConfig, dim: usize, data_seed: u64) -> Self {
        let mut rng = seeded_rng(derive_seed(data_seed, 0));
        let means = (0..task.classes)
            .map(|_| {
                let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                dir.iter().map(|v| v / norm * task.separation / 2.0).collect()
            })
            .collect();
        Self {
            dim,
            noise: task.noise,
            means,
        }
    }

    /// Rotates every mean by `angle` radians towards a fresh random direction
    /// orthogonal to it, keeping its norm.
    pub fn shifted(&self, angle: f64, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let means = self
            .means
            .iter()
            .map(|m| {
                let norm_sq: f64 = m.iter().map(|v| v * v).sum();
                let mut dir: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                if norm_sq > 0.0 {
                    let along = dir.iter().zip(m).map(|(d, v)| d * v).sum::<f64>() / norm_sq;
                    dir.iter_mut().zip(m).for_each(|(d, v)| *d -= along * v);
                }
                let dir_norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                let scale = norm_sq.sqrt() / dir_norm;
                m.iter()
                    .zip(&dir)
                    .map(|(v, d)| angle.cos() * v + angle.sin() * d * scale)
                    .collect()
            })
            .collect();
        Self {
            dim: self.dim,
            noise: self.noise,
            means,
        }
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn sample<T: Real>(&self, rng: &mut ChaCha8Rng, n: usize) -> Batch<T> {
        let labels: Vec<usize> = (0..n).map(|_| uniform_below(rng, self.classes())).collect();
        // column-major draw so each sample is contiguous in the stream
        let mut cols = vec![0.0f64; self.dim * n];
        for (s, &c) in labels.iter().enumerate() {
            for i in 0..self.dim {
                let z: f64 = rng.sample(StandardNormal);
                cols[s * self.dim + i] = self.means[c][i] + self.noise * z;
            }
        }
        let x = Matrix::from_fn(self.dim, n, |i, s| T::from_f64(cols[s * self.dim + i]));
        Batch { x, labels }
    }

    pub fn eval_set<T: Real>(&self, data_seed: u64, n: usize) -> Batch<T> {
        self.sample(&mut seeded_rng(derive_seed(data_seed, 1)), n)
    }

    pub fn train_stream(data_seed: u64) -> ChaCha8Rng {
        seeded_rng(derive_seed(data_seed, 2))
    }
}
