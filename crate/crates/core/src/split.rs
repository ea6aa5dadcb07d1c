//! Seeded, reproducible train/validation/test index splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl DatasetSplit {
    /// Shuffles `0..n` with a seeded generator and cuts it into three
    /// disjoint parts. Fractions must sum to at most 1; the remainder
    /// goes to the training part.
    pub fn new(n: usize, validation_fraction: f64, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&validation_fraction)
            || !(0.0..1.0).contains(&test_fraction)
            || validation_fraction + test_fraction >= 1.0
        {
            return Err(Error::InvalidArgument(
                "split fractions must lie in [0,1) and sum below 1".into(),
            ));
        }
        let mut indices: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        indices.shuffle(&mut rng);
        let n_val = (n as f64 * validation_fraction).floor() as usize;
        let n_test = (n as f64 * test_fraction).floor() as usize;
        let validation = indices[..n_val].to_vec();
        let test = indices[n_val..n_val + n_test].to_vec();
        let train = indices[n_val + n_test..].to_vec();
        Ok(Self {
            train,
            validation,
            test,
            seed,
        })
    }
}
