use serde::{Deserialize, Serialize};

use super::{Classifier, TrainingSet};
use crate::data::ClassLabel;

/// k-nearest-neighbour vote classifier on Euclidean distance. Equidistant
/// neighbours are ranked by training index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    k: usize,
    n_classes: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<ClassLabel>,
}

impl Knn {
    pub fn fit(train: &TrainingSet, k: usize) -> Self {
        Self {
            k: k.min(train.len()),
            n_classes: train.n_classes(),
            features: train.features().to_vec(),
            labels: train.labels().to_vec(),
        }
    }
}

fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Classifier for Knn {
    fn n_features(&self) -> usize {
        self.features[0].len()
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut order: Vec<(f64, usize)> = self
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| (squared_euclidean(f, x), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0.0; self.n_classes];
        for &(_, i) in order.iter().take(self.k) {
            votes[self.labels[i]] += 1.0;
        }
        votes.iter_mut().for_each(|v| *v /= self.k as f64);
        votes
    }
}
