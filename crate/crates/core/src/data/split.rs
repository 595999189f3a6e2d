use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{shuffle, stream_rng, TAG_SPLIT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub n_splits: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        if self.n_splits == 0 {
            return Err(Error::invalid("n_splits must be at least 1"));
        }
        Ok(())
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.5,
            n_splits: 1,
            seed: 0,
        }
    }
}

/// Train/test positions for one split: shuffle `0..n` on the split's stream,
/// take the first `round(train_fraction * n)` as train. Both halves are
/// returned in ascending order.
pub fn split_indices(n: usize, spec: &SplitSpec, split_index: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    if split_index >= spec.n_splits {
        return Err(Error::invalid(format!(
            "split index {split_index} out of range for {} splits",
            spec.n_splits
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(spec.seed, TAG_SPLIT, split_index as u64);
    shuffle(&mut rng, &mut order);
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(dataset: &Dataset, spec: &SplitSpec, split_index: usize) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.len(), spec, split_index)?;
    let base = dataset.name();
    Ok((
        dataset.subset(format!("{base}/train{split_index}"), &train)?,
        dataset.subset(format!("{base}/test{split_index}"), &test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Instance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn toy(n: usize) -> Dataset {
        let inst = (0..n).map(|i| Instance::new(format!("i{i}"), vec![i as f64])).collect();
        Dataset::new("toy", vec!["x".into()], inst, 2).unwrap()
    }

    // Independent restatement of the documented procedure.
    fn reference_train(n: usize, seed: u64, index: u64, fraction: f64) -> Vec<usize> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((1u64 << 32) | index);
        let mut order: Vec<usize> = (0..n).collect();
        let mut i = n;
        while i > 1 {
            i -= 1;
            let j = rng.random_range(0..=i as u64) as usize;
            order.swap(i, j);
        }
        let mut t = order[..(fraction * n as f64).round() as usize].to_vec();
        t.sort();
        t
    }

    #[test]
    fn cardinality_and_disjointness() {
        let spec = SplitSpec { train_fraction: 0.5, n_splits: 3, seed: 7 };
        let (train, test) = split(&toy(10), &spec, 0).unwrap();
        assert_eq!(train.len(), 5);
        assert_eq!(test.len(), 5);
        let a: HashSet<_> = train.instances().iter().map(|i| i.id.clone()).collect();
        let b: HashSet<_> = test.instances().iter().map(|i| i.id.clone()).collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), 10);
    }

    #[test]
    fn deterministic_and_index_dependent() {
        let spec = SplitSpec { train_fraction: 0.5, n_splits: 2, seed: 7 };
        let first = split_indices(10, &spec, 0).unwrap();
        assert_eq!(first, split_indices(10, &spec, 0).unwrap());
        let second = split_indices(10, &spec, 1).unwrap();
        assert_eq!(first.0, reference_train(10, 7, 0, 0.5));
        assert_eq!(second.0, reference_train(10, 7, 1, 0.5));
        assert_ne!(first.0, second.0);
    }

    #[test]
    fn out_of_range_index() {
        let spec = SplitSpec { train_fraction: 0.5, n_splits: 2, seed: 7 };
        assert!(split_indices(10, &spec, 2).is_err());
        let bad = SplitSpec { n_splits: 0, ..spec };
        assert!(split_indices(10, &bad, 0).is_err());
    }
}
