//! Classifiers with probability outputs used to rank model uncertainty.
//!
//! All learners are fitted through [`fit`] from a [`LearnerConfig`] and come
//! back as an immutable [`Model`]. A training set containing a single class
//! produces a degenerate constant model that is flagged as such.

mod forest;
mod knn;
mod naive_bayes;
mod tree;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ClassLabel;
use crate::error::{Error, Result};

pub use forest::RandomForest;
pub use knn::Knn;
pub use naive_bayes::GaussianNb;
pub use tree::{DecisionTree, TreeParams};

pub const MODEL_FORMAT: &str = "alkit-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class_probs: Vec<f64>,
    pub predicted: ClassLabel,
}

impl Prediction {
    /// Normalizes non-negative weights into probabilities; argmax ties go to
    /// the lowest class index.
    pub fn from_weights(mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            let uniform = 1.0 / weights.len() as f64;
            weights.iter_mut().for_each(|w| *w = uniform);
        }
        let predicted = argmax(&weights);
        Self {
            class_probs: weights,
            predicted,
        }
    }

    pub fn max_prob(&self) -> f64 {
        self.class_probs[self.predicted]
    }

    pub fn prob(&self, class: ClassLabel) -> f64 {
        self.class_probs.get(class).copied().unwrap_or(0.0)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub trait Classifier {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;
    /// Probabilities for a feature vector whose length was already checked.
    fn probabilities(&self, features: &[f64]) -> Vec<f64>;

    fn predict_proba(&self, features: &[f64]) -> Result<Prediction> {
        if features.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                actual: features.len(),
            });
        }
        Ok(Prediction::from_weights(self.probabilities(features)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Knn,
    GaussianNb,
    DecisionTree,
    RandomForest,
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(Self::Knn),
            "nb" | "gaussian_nb" => Ok(Self::GaussianNb),
            "tree" | "decision_tree" => Ok(Self::DecisionTree),
            "rf" | "random_forest" => Ok(Self::RandomForest),
            other => Err(Error::invalid(format!("unknown learner `{other}`"))),
        }
    }
}

/// How many features a tree considers at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    Sqrt,
    All,
    Count(usize),
}

impl FeatureSubsample {
    pub fn resolve(self, n_features: usize) -> usize {
        let m = match self {
            Self::Sqrt => (n_features as f64).sqrt() as usize,
            Self::All => n_features,
            Self::Count(c) => c,
        };
        m.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub kind: LearnerKind,
    pub k: usize,
    pub n_trees: usize,
    /// Root is depth 0; `max_depth = 0` yields a single leaf.
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_subsample: FeatureSubsample,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            kind: LearnerKind::RandomForest,
            k: 5,
            n_trees: 100,
            max_depth: 12,
            min_leaf: 2,
            feature_subsample: FeatureSubsample::Sqrt,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn of_kind(kind: LearnerKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.n_trees == 0 {
            return Err(Error::invalid("n_trees must be at least 1"));
        }
        if self.min_leaf == 0 {
            return Err(Error::invalid("min_leaf must be at least 1"));
        }
        Ok(())
    }
}

/// Feature rows with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    features: Vec<Vec<f64>>,
    labels: Vec<ClassLabel>,
    n_classes: usize,
}

impl TrainingSet {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<ClassLabel>, n_classes: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if features.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let width = features[0].len();
        if let Some(bad) = features.iter().find(|f| f.len() != width) {
            return Err(Error::DimensionMismatch {
                expected: width,
                actual: bad.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{n_classes}")));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features[0].len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    /// Fixed class distribution: untrained placeholder or single-class fit.
    Constant {
        n_features: usize,
        class_probs: Vec<f64>,
        degenerate: bool,
    },
    Knn(Knn),
    GaussianNb(GaussianNb),
    DecisionTree(DecisionTree),
    RandomForest(RandomForest),
}

impl Model {
    /// Uniform predictions; stands in before any label exists.
    pub fn uniform(n_features: usize, n_classes: usize) -> Self {
        Model::Constant {
            n_features,
            class_probs: vec![1.0 / n_classes as f64; n_classes],
            degenerate: true,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, Model::Constant { degenerate: true, .. })
    }

    fn inner(&self) -> Option<&dyn Classifier> {
        match self {
            Model::Constant { .. } => None,
            Model::Knn(m) => Some(m),
            Model::GaussianNb(m) => Some(m),
            Model::DecisionTree(m) => Some(m),
            Model::RandomForest(m) => Some(m),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            format: &'a str,
            version: u32,
            model: &'a Model,
        }
        Ok(serde_json::to_string(&Doc {
            format: MODEL_FORMAT,
            version: MODEL_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            format: String,
            version: u32,
            model: Model,
        }
        let doc: Doc = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model document {} v{}",
                doc.format, doc.version
            )));
        }
        Ok(doc.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

impl Classifier for Model {
    fn n_features(&self) -> usize {
        match self {
            Model::Constant { n_features, .. } => *n_features,
            _ => self.inner().map(|m| m.n_features()).unwrap_or(0),
        }
    }

    fn n_classes(&self) -> usize {
        match self {
            Model::Constant { class_probs, .. } => class_probs.len(),
            _ => self.inner().map(|m| m.n_classes()).unwrap_or(0),
        }
    }

    fn probabilities(&self, features: &[f64]) -> Vec<f64> {
        match self {
            Model::Constant { class_probs, .. } => class_probs.clone(),
            _ => self
                .inner()
                .map(|m| m.probabilities(features))
                .unwrap_or_default(),
        }
    }
}

/// Fits the configured learner. Deterministic in `(config, train)`.
pub fn fit(config: &LearnerConfig, train: &TrainingSet) -> Result<Model> {
    config.validate()?;
    let counts = train.class_counts();
    let present: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    if present.len() == 1 {
        let mut class_probs = vec![0.0; train.n_classes()];
        class_probs[present[0]] = 1.0;
        return Ok(Model::Constant {
            n_features: train.n_features(),
            class_probs,
            degenerate: true,
        });
    }
    Ok(match config.kind {
        LearnerKind::Knn => Model::Knn(Knn::fit(train, config.k)),
        LearnerKind::GaussianNb => Model::GaussianNb(GaussianNb::fit(train)),
        LearnerKind::DecisionTree => {
            let params = TreeParams {
                max_depth: config.max_depth,
                min_leaf: config.min_leaf,
                max_features: match config.feature_subsample {
                    FeatureSubsample::Sqrt => train.n_features(),
                    other => other.resolve(train.n_features()),
                },
            };
            let mut rng = crate::rng::stream_rng(config.seed, crate::rng::TAG_LEARNER, 0);
            let all: Vec<usize> = (0..train.len()).collect();
            Model::DecisionTree(DecisionTree::fit(train, &all, &params, &mut rng))
        }
        LearnerKind::RandomForest => Model::RandomForest(RandomForest::fit(train, config)),
    })
}
