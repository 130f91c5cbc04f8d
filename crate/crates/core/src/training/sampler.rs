use rand::Rng;

use crate::dataset::{GridDataset, GridRecord};
use crate::error::{Error, Result};

/// Draws `n` records uniformly with replacement, optionally from the boundary subset only.
pub fn sample_batch<R: Rng + ?Sized>(
    dataset: &GridDataset,
    n: usize,
    boundary_only: bool,
    rng: &mut R,
) -> Result<Vec<GridRecord>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if boundary_only {
        let idx = dataset.boundary_indices();
        if idx.is_empty() {
            return Err(Error::EmptySubset("boundary"));
        }
        Ok((0..n)
            .map(|_| dataset.records[idx[rng.random_range(0..idx.len())]])
            .collect())
    } else {
        if dataset.is_empty() {
            return Err(Error::EmptySubset("dataset"));
        }
        let len = dataset.len();
        Ok((0..n)
            .map(|_| dataset.records[rng.random_range(0..len)])
            .collect())
    }
}
