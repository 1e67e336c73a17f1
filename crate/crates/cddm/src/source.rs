//! Synthetic test sources for end-to-end benchmarks.
//!
//! Three desk-scale source families stand in for natural images: Gaussian
//! mixtures, sparse spike trains, and smooth grayscale patches. Each sampler
//! fixes its parameters at construction (mixture means are drawn once from a
//! dedicated setup stream), so draws are reproducible per RNG stream.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{standard_normal_vec, RngStream};

#[derive(Debug, Error, PartialEq)]
pub enum SourceError {
    #[error("source dimension must be >= 1, got {0}")]
    BadDim(usize),
    #[error("mixture needs >= 1 component, got {0}")]
    BadComponents(usize),
    #[error("component std must be finite and > 0, got {0}")]
    BadStd(f64),
    #[error("spike count {nonzeros} exceeds dimension {dim}")]
    BadSparsity { nonzeros: usize, dim: usize },
    #[error("image side must be >= 2, got {0}")]
    BadSide(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    GaussianMixture,
    SparseSpike,
    TinyImage,
}

/// A fixed-dimension source distribution with a seeded sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSampler {
    kind: SourceKind,
    dim: usize,
    /// Mixture component means (components x dim); empty for other kinds.
    means: Vec<Vec<f64>>,
    component_std: f64,
    nonzeros: usize,
    side: usize,
}

impl SourceSampler {
    /// Equal-weight Gaussian mixture. Component means are drawn uniformly
    /// from [-1, 1]^dim using the setup stream and then frozen.
    pub fn gaussian_mixture(
        dim: usize,
        components: usize,
        component_std: f64,
        setup: RngStream,
    ) -> Result<Self, SourceError> {
        if dim == 0 {
            return Err(SourceError::BadDim(dim));
        }
        if components == 0 {
            return Err(SourceError::BadComponents(components));
        }
        if !component_std.is_finite() || component_std <= 0.0 {
            return Err(SourceError::BadStd(component_std));
        }
        let mut rng = setup.rng();
        let means = (0..components)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Ok(Self {
            kind: SourceKind::GaussianMixture,
            dim,
            means,
            component_std,
            nonzeros: 0,
            side: 0,
        })
    }

    /// Vectors with a fixed number of +/-1 spikes at random positions.
    pub fn sparse_spike(dim: usize, nonzeros: usize) -> Result<Self, SourceError> {
        if dim == 0 {
            return Err(SourceError::BadDim(dim));
        }
        if nonzeros == 0 || nonzeros > dim {
            return Err(SourceError::BadSparsity { nonzeros, dim });
        }
        Ok(Self {
            kind: SourceKind::SparseSpike,
            dim,
            means: Vec::new(),
            component_std: 0.0,
            nonzeros,
            side: 0,
        })
    }

    /// Smooth grayscale side x side patches with values in [0, 1], built
    /// from two random low-frequency waves.
    pub fn tiny_image(side: usize) -> Result<Self, SourceError> {
        if side < 2 {
            return Err(SourceError::BadSide(side));
        }
        Ok(Self {
            kind: SourceKind::TinyImage,
            dim: side * side,
            means: Vec::new(),
            component_std: 0.0,
            nonzeros: 0,
            side,
        })
    }

    pub fn kind(&self) -> SourceKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nominal value-range width, the peak measure used by PSNR:
    /// mixture spans [-1,1] means plus 3-sigma tails (2 + 6 std), spikes
    /// span [-1,1] (2), patches span [0,1] (1).
    pub fn range_width(&self) -> f64 {
        match self.kind {
            SourceKind::GaussianMixture => 2.0 + 6.0 * self.component_std,
            SourceKind::SparseSpike => 2.0,
            SourceKind::TinyImage => 1.0,
        }
    }

    /// Per-dimension MSE of the best constant predictor (the source mean),
    /// i.e. the per-dimension variance averaged over dimensions.
    pub fn mean_predictor_mse(&self) -> f64 {
        match self.kind {
            SourceKind::GaussianMixture => {
                let c = self.means.len() as f64;
                let mut acc = 0.0;
                for i in 0..self.dim {
                    let mean: f64 = self.means.iter().map(|m| m[i]).sum::<f64>() / c;
                    let sq: f64 = self.means.iter().map(|m| m[i] * m[i]).sum::<f64>() / c;
                    acc += self.component_std * self.component_std + sq - mean * mean;
                }
                acc / self.dim as f64
            }
            SourceKind::SparseSpike => self.nonzeros as f64 / self.dim as f64,
            // two independent quarter-amplitude waves with uniform phase:
            // 2 * (0.25^2 / 2)
            SourceKind::TinyImage => 0.0625,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.kind {
            SourceKind::GaussianMixture => {
                let c = rng.random_range(0..self.means.len());
                let noise = standard_normal_vec(rng, self.dim);
                (0..self.dim)
                    .map(|i| self.means[c][i] + self.component_std * noise[i])
                    .collect()
            }
            SourceKind::SparseSpike => {
                let mut v = vec![0.0; self.dim];
                for pos in index::sample(rng, self.dim, self.nonzeros) {
                    v[pos] = if rng.random::<bool>() { 1.0 } else { -1.0 };
                }
                v
            }
            SourceKind::TinyImage => {
                let fr = rng.random_range(1..=2) as f64;
                let fc = rng.random_range(1..=2) as f64;
                let p1 = rng.random_range(0.0..std::f64::consts::TAU);
                let p2 = rng.random_range(0.0..std::f64::consts::TAU);
                let side = self.side as f64;
                let mut v = Vec::with_capacity(self.dim);
                for r in 0..self.side {
                    for c in 0..self.side {
                        let a = (std::f64::consts::TAU * fr * r as f64 / side + p1).sin();
                        let b = (std::f64::consts::TAU * fc * c as f64 / side + p2).sin();
                        v.push(0.5 + 0.25 * a + 0.25 * b);
                    }
                }
                v
            }
        }
    }

    pub fn sample_batch(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}
