//! CART classification tree with Gini impurity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Classifier, TrainingSet};
use crate::rng::sample_positions;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per split, drawn without replacement.
    pub max_features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        class_probs: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    n_features: usize,
    n_classes: usize,
    nodes: Vec<Node>,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct Candidate {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl DecisionTree {
    /// Grows a tree on the rows of `train` listed in `sample` (repeats allowed).
    pub fn fit<R: Rng + ?Sized>(
        train: &TrainingSet,
        sample: &[usize],
        params: &TreeParams,
        rng: &mut R,
    ) -> Self {
        let mut tree = Self {
            n_features: train.n_features(),
            n_classes: train.n_classes(),
            nodes: Vec::new(),
        };
        tree.grow(train, sample.to_vec(), 0, params, rng);
        tree
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn leaf(&mut self, counts: &[usize], total: usize) -> usize {
        let class_probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
        self.nodes.push(Node::Leaf { class_probs });
        self.nodes.len() - 1
    }

    fn grow<R: Rng + ?Sized>(
        &mut self,
        train: &TrainingSet,
        sample: Vec<usize>,
        depth: usize,
        params: &TreeParams,
        rng: &mut R,
    ) -> usize {
        let labels = train.labels();
        let mut counts = vec![0usize; self.n_classes];
        for &i in &sample {
            counts[labels[i]] += 1;
        }
        let n = sample.len();
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= params.max_depth || n < 2 * params.min_leaf {
            return self.leaf(&counts, n);
        }

        let parent = gini(&counts, n);
        let features = sample_positions(rng, self.n_features, params.max_features);
        let mut best: Option<Candidate> = None;
        let mut order = sample.clone();
        for &f in &features {
            let x = |i: usize| train.features()[i][f];
            order.sort_by(|&a, &b| x(a).total_cmp(&x(b)).then(a.cmp(&b)));
            let mut left = vec![0usize; self.n_classes];
            let mut right = counts.clone();
            for pos in 0..n - 1 {
                let row = order[pos];
                left[labels[row]] += 1;
                right[labels[row]] -= 1;
                let n_left = pos + 1;
                if n_left < params.min_leaf || n - n_left < params.min_leaf {
                    continue;
                }
                let (lo, hi) = (x(row), x(order[pos + 1]));
                if lo == hi {
                    continue;
                }
                let impurity = (n_left as f64 * gini(&left, n_left)
                    + (n - n_left) as f64 * gini(&right, n - n_left))
                    / n as f64;
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    best = Some(Candidate {
                        feature: f,
                        threshold: lo + (hi - lo) / 2.0,
                        impurity,
                    });
                }
            }
        }

        let Some(split) = best.filter(|b| b.impurity < parent - 1e-12) else {
            return self.leaf(&counts, n);
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = sample
            .into_iter()
            .partition(|&i| train.features()[i][split.feature] <= split.threshold);

        let id = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let l = self.grow(train, left_rows, depth + 1, params, rng);
        let r = self.grow(train, right_rows, depth + 1, params, rng);
        if let Node::Split { left, right, .. } = &mut self.nodes[id] {
            *left = l;
            *right = r;
        }
        id
    }

    pub(crate) fn leaf_probs(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { class_probs } => return class_probs,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

impl Classifier for DecisionTree {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        self.leaf_probs(x).to_vec()
    }
}
