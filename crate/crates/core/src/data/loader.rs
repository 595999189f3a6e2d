//! CSV ingestion driven by a JSON column-role schema.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Instance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Id,
    FeatureNumeric,
    FeatureCategorical,
    Label,
    Display,
    Ignore,
}

/// Column-role mapping, read from JSON:
///
/// ```json
/// { "n_classes": 2, "columns": { "id": "id", "size": "feature_numeric", "label": "label" } }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub n_classes: usize,
    pub columns: BTreeMap<String, ColumnRole>,
}

impl CsvSchema {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Sorted category values per categorical column, in column order. Fitted
/// from the first file loaded and reused on held-out files; categories not
/// in the vocabulary encode as all zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryVocab {
    pub columns: Vec<(String, Vec<String>)>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(Dataset, CategoryVocab)> {
    load_csv_with_vocab(path, schema, None)
}

pub fn load_csv_with_vocab(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    vocab: Option<&CategoryVocab>,
) -> Result<(Dataset, CategoryVocab)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    parse_csv(&name, text.as_bytes(), schema, vocab)
}

pub(crate) fn parse_csv(
    name: &str,
    bytes: &[u8],
    schema: &CsvSchema,
    vocab: Option<&CategoryVocab>,
) -> Result<(Dataset, CategoryVocab)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() {
        return Err(Error::Schema("missing header row".into()));
    }

    let mut seen = HashSet::new();
    let mut roles = Vec::with_capacity(header.len());
    for col in &header {
        if !seen.insert(col.as_str()) {
            return Err(Error::Schema(format!("duplicate header column `{col}`")));
        }
        let role = schema
            .columns
            .get(col)
            .ok_or_else(|| Error::Schema(format!("header column `{col}` has no role in schema")))?;
        roles.push(*role);
    }
    if let Some(missing) = schema.columns.keys().find(|c| !seen.contains(c.as_str())) {
        return Err(Error::Schema(format!("schema column `{missing}` not in header")));
    }
    for unique in [ColumnRole::Id, ColumnRole::Label] {
        if roles.iter().filter(|r| **r == unique).count() > 1 {
            return Err(Error::Schema(format!("more than one {unique:?} column")));
        }
    }

    let records: Vec<csv::StringRecord> = reader
        .records()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Row {
                row: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<_>>()?;

    let categorical: Vec<usize> = roles
        .iter()
        .enumerate()
        .filter(|(_, r)| **r == ColumnRole::FeatureCategorical)
        .map(|(i, _)| i)
        .collect();

    let vocab = match vocab {
        Some(v) => {
            let expected: Vec<&str> = categorical.iter().map(|&i| header[i].as_str()).collect();
            let given: Vec<&str> = v.columns.iter().map(|(c, _)| c.as_str()).collect();
            if expected != given {
                return Err(Error::Schema(format!(
                    "category vocabulary columns {given:?} do not match {expected:?}"
                )));
            }
            v.clone()
        }
        None => CategoryVocab {
            columns: categorical
                .iter()
                .map(|&col| {
                    let values: BTreeSet<&str> = records.iter().map(|r| &r[col]).collect();
                    (
                        header[col].clone(),
                        values.into_iter().map(str::to_string).collect(),
                    )
                })
                .collect(),
        },
    };

    let mut feature_names: Vec<String> = roles
        .iter()
        .zip(&header)
        .filter(|(r, _)| **r == ColumnRole::FeatureNumeric)
        .map(|(_, h)| h.clone())
        .collect();
    for (col, values) in &vocab.columns {
        feature_names.extend(values.iter().map(|v| format!("{col}={v}")));
    }

    let mut instances = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let row = i + 1;
        let mut id = None;
        let mut label = None;
        let mut numeric = Vec::new();
        let mut display = BTreeMap::new();
        for (col, role) in roles.iter().enumerate() {
            let cell = rec.get(col).unwrap_or("");
            match role {
                ColumnRole::Id => id = Some(cell.to_string()),
                ColumnRole::FeatureNumeric => {
                    let v: f64 = cell.trim().parse().map_err(|_| Error::Row {
                        row,
                        message: format!("column `{}`: cannot parse `{cell}` as a number", header[col]),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Row {
                            row,
                            message: format!("column `{}`: non-finite value", header[col]),
                        });
                    }
                    numeric.push(v);
                }
                ColumnRole::Label => {
                    let cell = cell.trim();
                    if !cell.is_empty() {
                        let v: usize = cell.parse().map_err(|_| Error::Row {
                            row,
                            message: format!("label `{cell}` is not a class index"),
                        })?;
                        if v >= schema.n_classes {
                            return Err(Error::Row {
                                row,
                                message: format!(
                                    "label {v} outside declared {} classes",
                                    schema.n_classes
                                ),
                            });
                        }
                        label = Some(v);
                    }
                }
                ColumnRole::Display => {
                    display.insert(header[col].clone(), cell.to_string());
                }
                ColumnRole::FeatureCategorical | ColumnRole::Ignore => {}
            }
        }
        let mut features = numeric;
        for (&col, (_, values)) in categorical.iter().zip(&vocab.columns) {
            let cell = &rec[col];
            features.extend(values.iter().map(|v| if v == cell { 1.0 } else { 0.0 }));
        }
        instances.push(Instance {
            id: id.unwrap_or_else(|| format!("row-{row}")),
            features,
            ground_truth: label,
            display,
        });
    }

    let dataset = Dataset::new(name, feature_names, instances, schema.n_classes)?;
    Ok((dataset, vocab))
}

/// Writes `dataset` as CSV (id, numeric features, display fields, label)
/// and returns the schema that reads it back. Values use the shortest
/// round-tripping decimal form, so a reload is exact.
pub fn write_dataset_csv<W: Write>(dataset: &Dataset, out: W) -> Result<CsvSchema> {
    let display: BTreeSet<&str> = dataset
        .instances()
        .iter()
        .flat_map(|i| i.display.keys().map(String::as_str))
        .collect();
    let mut columns = BTreeMap::new();
    let mut header = vec!["id".to_string()];
    columns.insert("id".to_string(), ColumnRole::Id);
    let mut push = |name: &str, role: ColumnRole| -> Result<()> {
        if columns.insert(name.to_string(), role).is_some() {
            return Err(Error::Schema(format!("column name `{name}` used twice")));
        }
        header.push(name.to_string());
        Ok(())
    };
    for f in dataset.feature_names() {
        push(f, ColumnRole::FeatureNumeric)?;
    }
    for d in &display {
        push(d, ColumnRole::Display)?;
    }
    push("label", ColumnRole::Label)?;

    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(&header)?;
    for inst in dataset.instances() {
        let mut record = vec![inst.id.clone()];
        record.extend(inst.features.iter().map(|v| v.to_string()));
        record.extend(display.iter().map(|d| inst.display.get(*d).cloned().unwrap_or_default()));
        record.push(inst.ground_truth.map(|c| c.to_string()).unwrap_or_default());
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::Io {
        path: "<csv output>".into(),
        source: e,
    })?;
    Ok(CsvSchema {
        n_classes: dataset.n_classes(),
        columns,
    })
}
