use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, TreeParams};
use super::{Classifier, LearnerConfig, TrainingSet};
use crate::rng::{stream_rng, TAG_LEARNER};

/// Bagged CART ensemble. Each tree draws its bootstrap sample and split
/// features from its own stream, so fitting in parallel is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    n_features: usize,
    n_classes: usize,
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(train: &TrainingSet, config: &LearnerConfig) -> Self {
        let params = TreeParams {
            max_depth: config.max_depth,
            min_leaf: config.min_leaf,
            max_features: config.feature_subsample.resolve(train.n_features()),
        };
        let n = train.len();
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = stream_rng(config.seed, TAG_LEARNER, 1 + t as u64);
                let sample: Vec<usize> = if config.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n as u64) as usize).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit(train, &sample, &params, &mut rng)
            })
            .collect();
        Self {
            n_features: train.n_features(),
            n_classes: train.n_classes(),
            trees,
        }
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }
}

impl Classifier for RandomForest {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        for tree in &self.trees {
            for (a, p) in acc.iter_mut().zip(tree.leaf_probs(x)) {
                *a += p;
            }
        }
        let k = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        acc
    }
}
