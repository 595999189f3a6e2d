use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementLevel {
    Nominal,
    Interval,
}

impl MeasurementLevel {
    fn delta(self, a: f64, b: f64) -> f64 {
        match self {
            Self::Nominal => {
                if a == b {
                    0.0
                } else {
                    1.0
                }
            }
            Self::Interval => (a - b) * (a - b),
        }
    }
}

/// Krippendorff's alpha from a raters × items matrix (`None` = missing).
///
/// Works through the coincidence matrix of values that appear in units with
/// at least two ratings. If the pairable values show no variation at all,
/// agreement is perfect and the result is 1.
pub fn krippendorff_alpha(ratings: &[Vec<Option<f64>>], level: MeasurementLevel) -> Result<f64> {
    let n_items = ratings.iter().map(Vec::len).max().unwrap_or(0);
    if ratings.iter().any(|r| r.len() != n_items) {
        return Err(Error::invalid("rating rows differ in length"));
    }
    let units: Vec<Vec<f64>> = (0..n_items)
        .map(|u| ratings.iter().filter_map(|r| r[u]).collect::<Vec<f64>>())
        .filter(|vals| vals.len() >= 2)
        .collect();
    if units.len() < 2 {
        return Err(Error::Insufficient(
            "need at least two items with two or more ratings".into(),
        ));
    }
    if units.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite rating"));
    }

    let mut values: Vec<f64> = units.iter().flatten().copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let idx = |v: f64| values.binary_search_by(|p| p.total_cmp(&v)).expect("value indexed");
    let k = values.len();

    let mut coincidence = vec![vec![0.0; k]; k];
    for unit in &units {
        let m = unit.len() as f64;
        for (i, &a) in unit.iter().enumerate() {
            for (j, &b) in unit.iter().enumerate() {
                if i != j {
                    coincidence[idx(a)][idx(b)] += 1.0 / (m - 1.0);
                }
            }
        }
    }
    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();

    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..k {
        for e in 0..k {
            let d = level.delta(values[c], values[e]);
            observed += coincidence[c][e] * d;
            expected += marginals[c] * marginals[e] * d;
        }
    }
    if expected == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}
