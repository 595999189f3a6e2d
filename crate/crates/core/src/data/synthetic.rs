//! Synthetic stand-in for an email-anomaly table.
//!
//! Four behavioural features are drawn from two overlapping Gaussian
//! clusters (one per class). Three count-like, right-skewed features play
//! the roles of message size, sensitive-term count and recipient count; the
//! anomalous class has heavier tails on all three. Class 1 is the anomaly.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};

use super::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::rng::{sample_positions, stream_rng, TAG_SYNTHETIC};

const CLUSTER_DIMS: usize = 4;
const CLUSTER_OFFSET: f64 = 0.55;

pub fn generate_synthetic_anomaly_dataset(n: usize, anomaly_rate: f64, seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::invalid(format!("n must be at least 10, got {n}")));
    }
    if !(anomaly_rate > 0.0 && anomaly_rate < 1.0) {
        return Err(Error::invalid(format!(
            "anomaly_rate {anomaly_rate} outside (0, 1)"
        )));
    }

    let mut label_rng = stream_rng(seed, TAG_SYNTHETIC, 0);
    let n_pos = ((n as f64 * anomaly_rate).round() as usize).clamp(1, n - 1);
    let mut labels = vec![0usize; n];
    for p in sample_positions(&mut label_rng, n, n_pos) {
        labels[p] = 1;
    }

    let mut rng = stream_rng(seed, TAG_SYNTHETIC, 1);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let size = [
        LogNormal::<f64>::new(9.0, 0.8).expect("valid lognormal"),
        LogNormal::<f64>::new(9.5, 0.9).expect("valid lognormal"),
    ];
    let terms = [
        Poisson::new(1.5).expect("valid poisson"),
        Poisson::new(2.6).expect("valid poisson"),
    ];
    let recipients = [
        Poisson::new(2.0).expect("valid poisson"),
        Poisson::new(2.8).expect("valid poisson"),
    ];

    let mut feature_names: Vec<String> = (0..CLUSTER_DIMS).map(|k| format!("activity_{k}")).collect();
    feature_names.extend(
        ["message_size", "sensitive_term_count", "recipient_count"]
            .iter()
            .map(|s| s.to_string()),
    );

    let instances = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let sign = if label == 1 { 1.0 } else { -1.0 };
            let mut features: Vec<f64> = (0..CLUSTER_DIMS)
                .map(|_| sign * CLUSTER_OFFSET + unit.sample(&mut rng))
                .collect();
            features.push(size[label].sample(&mut rng).round());
            features.push(terms[label].sample(&mut rng));
            features.push(1.0 + recipients[label].sample(&mut rng));
            let sender = rng.random_range(0..50u32);
            Instance::new(format!("e{i:05}"), features)
                .with_truth(label)
                .with_display("subject", format!("[redacted subject #{i}]"))
                .with_display("sender", format!("user{sender:03}"))
        })
        .collect();

    Dataset::new("synthetic_anomaly", feature_names, instances, 2)
}
