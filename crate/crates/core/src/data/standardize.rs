use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Per-feature z-score record (population standard deviation). Columns with
/// zero spread map to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::Empty("cannot standardize an empty dataset"));
        }
        let n = dataset.len() as f64;
        let d = dataset.n_features();
        let mut means = vec![0.0; d];
        for inst in dataset.instances() {
            for (m, v) in means.iter_mut().zip(&inst.features) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; d];
        for inst in dataset.instances() {
            for ((s, v), m) in vars.iter_mut().zip(&inst.features).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let stds = vars.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self {
            feature_names: dataset.feature_names().to_vec(),
            means,
            stds,
        })
    }

    pub fn apply_value(&self, feature: usize, value: f64) -> f64 {
        let std = self.stds[feature];
        if std > 0.0 {
            (value - self.means[feature]) / std
        } else {
            0.0
        }
    }

    pub fn invert_value(&self, feature: usize, z: f64) -> f64 {
        self.means[feature] + z * self.stds[feature]
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        self.check_width(dataset)?;
        let features = dataset
            .instances()
            .iter()
            .map(|inst| {
                inst.features
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| self.apply_value(j, v))
                    .collect()
            })
            .collect();
        dataset.with_features(features)
    }

    pub fn invert(&self, dataset: &Dataset) -> Result<Dataset> {
        self.check_width(dataset)?;
        let features = dataset
            .instances()
            .iter()
            .map(|inst| {
                inst.features
                    .iter()
                    .enumerate()
                    .map(|(j, &z)| self.invert_value(j, z))
                    .collect()
            })
            .collect();
        dataset.with_features(features)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn check_width(&self, dataset: &Dataset) -> Result<()> {
        if dataset.n_features() != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                actual: dataset.n_features(),
            });
        }
        Ok(())
    }
}

/// Fits a [`Standardizer`] on `dataset` and returns the transformed copy.
pub fn standardize(dataset: &Dataset) -> Result<(Dataset, Standardizer)> {
    let record = Standardizer::fit(dataset)?;
    let out = record.apply(dataset)?;
    Ok((out, record))
}
