//! Datasets, ingestion and preprocessing.
//!
//! A [`Dataset`] is an immutable, ordered collection of [`Instance`]s that
//! share one feature layout. Instances carry optional ground truth (used by
//! simulated oracles and evaluation only) and optional display fields that
//! are safe to show to a human labeler.

mod labels;
mod loader;
mod split;
mod standardize;
mod synthetic;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use labels::{levenshtein_distance, levenshtein_similarity, transform_confidence_label};
pub use loader::{load_csv, load_csv_with_vocab, write_dataset_csv, CategoryVocab, ColumnRole, CsvSchema};
pub use split::{split, split_indices, SplitSpec};
pub use standardize::{standardize, Standardizer};
pub use synthetic::generate_synthetic_anomaly_dataset;

/// Class label. Classes are dense integers in `0..n_classes`.
pub type ClassLabel = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<ClassLabel>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub display: BTreeMap<String, String>,
}

impl Instance {
    pub fn new(id: impl Into<String>, features: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            features,
            ground_truth: None,
            display: BTreeMap::new(),
        }
    }

    pub fn with_truth(mut self, label: ClassLabel) -> Self {
        self.ground_truth = Some(label);
        self
    }

    pub fn with_display(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.display.insert(key.into(), value.into());
        self
    }
}

/// Where a label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Human,
    Simulated,
    GroundTruth,
}

/// A label assigned to a training instance, with the labeler's confidence
/// on the canonical `[0, 1]` scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub instance_id: String,
    pub label: ClassLabel,
    pub confidence: f64,
    pub source: LabelSource,
    pub round: usize,
}

impl LabeledExample {
    pub fn new(
        instance_id: impl Into<String>,
        label: ClassLabel,
        confidence: f64,
        source: LabelSource,
        round: usize,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            instance_id: instance_id.into(),
            label,
            confidence,
            source,
            round,
        })
    }
}

/// Converts a 0–10 integer confidence rating to the canonical `[0, 1]` scale.
pub fn canonical_confidence(rating_0_10: i64) -> Result<f64> {
    if !(0..=10).contains(&rating_0_10) {
        return Err(Error::invalid(format!(
            "confidence rating {rating_0_10} outside 0..=10"
        )));
    }
    Ok(rating_0_10 as f64 / 10.0)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    feature_names: Vec<String>,
    instances: Vec<Instance>,
    n_classes: usize,
    index: HashMap<String, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.feature_names == other.feature_names
            && self.instances == other.instances
            && self.n_classes == other.n_classes
    }
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        feature_names: Vec<String>,
        instances: Vec<Instance>,
        n_classes: usize,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Dataset(format!(
                "n_classes must be at least 2, got {n_classes}"
            )));
        }
        let width = feature_names.len();
        let mut index = HashMap::with_capacity(instances.len());
        for (pos, inst) in instances.iter().enumerate() {
            if inst.features.len() != width {
                return Err(Error::Dataset(format!(
                    "instance `{}` has {} features, expected {width}",
                    inst.id,
                    inst.features.len()
                )));
            }
            if let Some(label) = inst.ground_truth {
                if label >= n_classes {
                    return Err(Error::Dataset(format!(
                        "instance `{}` has label {label} outside 0..{n_classes}",
                        inst.id
                    )));
                }
            }
            if index.insert(inst.id.clone(), pos).is_some() {
                return Err(Error::Dataset(format!("duplicate instance id `{}`", inst.id)));
            }
        }
        Ok(Self {
            name: name.into(),
            feature_names,
            instances,
            n_classes,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.position(id).map(|p| &self.instances[p])
    }

    pub fn instance(&self, id: &str) -> Result<&Instance> {
        self.get(id).ok_or_else(|| Error::UnknownInstance(id.to_string()))
    }

    /// Builds a new dataset from the instances at `positions`, in that order.
    pub fn subset(&self, name: impl Into<String>, positions: &[usize]) -> Result<Dataset> {
        let instances = positions
            .iter()
            .map(|&p| {
                self.instances
                    .get(p)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("position {p} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(name, self.feature_names.clone(), instances, self.n_classes)
    }

    /// Same layout, new feature values. Used by transforms.
    pub(crate) fn with_features(&self, features: Vec<Vec<f64>>) -> Result<Dataset> {
        let instances = self
            .instances
            .iter()
            .zip(features)
            .map(|(inst, f)| Instance {
                features: f,
                ..inst.clone()
            })
            .collect();
        Dataset::new(
            self.name.clone(),
            self.feature_names.clone(),
            instances,
            self.n_classes,
        )
    }

    /// Number of instances per ground-truth class; unlabeled instances are skipped.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for label in self.instances.iter().filter_map(|i| i.ground_truth) {
            counts[label] += 1;
        }
        counts
    }
}
