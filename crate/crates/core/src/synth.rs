//! Seeded synthetic datasets for tests and benchmarks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::features::FeatureMatrix;

/// Gaussian blobs: `clusters` centers drawn uniformly in [-1,1]^D, points
/// assigned round-robin with isotropic noise of the given sigma.
pub fn gaussian_blobs(
    dims: usize,
    count: usize,
    clusters: usize,
    sigma: f64,
    seed: u64,
) -> Result<FeatureMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..dims).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut data = DMatrix::zeros(dims, count);
    for n in 0..count {
        let c = &centers[n % clusters];
        for d in 0..dims {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data[(d, n)] = c[d] + sigma * noise;
        }
    }
    FeatureMatrix::new(data)
}

/// A single isotropic (axis-symmetric) Gaussian centered at the origin.
pub fn isotropic_gaussian(dims: usize, count: usize, seed: u64) -> Result<FeatureMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = DMatrix::zeros(dims, count);
    for n in 0..count {
        for d in 0..dims {
            let v: f64 = StandardNormal.sample(&mut rng);
            data[(d, n)] = v;
        }
    }
    FeatureMatrix::new(data)
}
