use serde::{Deserialize, Serialize};

use super::{Classifier, TrainingSet};

const VARIANCE_FLOOR: f64 = 1e-9;

/// Gaussian naive Bayes with per-class diagonal variances. Classes absent
/// from the training set receive zero probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    log_priors: Vec<Option<f64>>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GaussianNb {
    pub fn fit(train: &TrainingSet) -> Self {
        let d = train.n_features();
        let k = train.n_classes();
        let counts = train.class_counts();
        let mut means = vec![vec![0.0; d]; k];
        for (x, &y) in train.features().iter().zip(train.labels()) {
            for (m, v) in means[y].iter_mut().zip(x) {
                *m += v;
            }
        }
        for (c, m) in means.iter_mut().enumerate() {
            if counts[c] > 0 {
                m.iter_mut().for_each(|v| *v /= counts[c] as f64);
            }
        }
        let mut variances = vec![vec![0.0; d]; k];
        for (x, &y) in train.features().iter().zip(train.labels()) {
            for ((s, v), m) in variances[y].iter_mut().zip(x).zip(&means[y]) {
                *s += (v - m) * (v - m);
            }
        }
        for (c, var) in variances.iter_mut().enumerate() {
            let n = counts[c].max(1) as f64;
            var.iter_mut().for_each(|v| *v = (*v / n).max(VARIANCE_FLOOR));
        }
        let total = train.len() as f64;
        let log_priors = counts
            .iter()
            .map(|&c| (c > 0).then(|| (c as f64 / total).ln()))
            .collect();
        Self {
            log_priors,
            means,
            variances,
        }
    }

    fn log_joint(&self, class: usize, x: &[f64]) -> Option<f64> {
        let prior = self.log_priors[class]?;
        let ll: f64 = x
            .iter()
            .zip(&self.means[class])
            .zip(&self.variances[class])
            .map(|((v, m), var)| {
                -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (v - m) * (v - m) / (2.0 * var)
            })
            .sum();
        Some(prior + ll)
    }
}

impl Classifier for GaussianNb {
    fn n_features(&self) -> usize {
        self.means[0].len()
    }

    fn n_classes(&self) -> usize {
        self.log_priors.len()
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let joint: Vec<Option<f64>> = (0..self.n_classes()).map(|c| self.log_joint(c, x)).collect();
        let max = joint
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = joint
            .iter()
            .map(|j| j.map(|v| (v - max).exp()).unwrap_or(0.0))
            .collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_pdf(x: f64, mean: f64, var: f64) -> f64 {
        (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn symmetric_clusters_are_even_at_origin() {
        let ts = TrainingSet::new(
            vec![vec![-1.5, -1.0], vec![-0.5, -1.0], vec![0.5, 1.0], vec![1.5, 1.0]],
            vec![0, 0, 1, 1],
            2,
        )
        .unwrap();
        let p = GaussianNb::fit(&ts).predict_proba(&[0.0, 0.0]).unwrap();
        assert!((p.class_probs[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn matches_closed_form_bayes_rule() {
        // class 0: {-2, 0, -1} (mean -1, var 2/3); class 1: {0, 2} (mean 1, var 1)
        let ts = TrainingSet::new(
            vec![vec![-2.0], vec![0.0], vec![-1.0], vec![0.0], vec![2.0]],
            vec![0, 0, 0, 1, 1],
            2,
        )
        .unwrap();
        let m = GaussianNb::fit(&ts);
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let a = 0.6 * gaussian_pdf(x, -1.0, 2.0 / 3.0);
            let b = 0.4 * gaussian_pdf(x, 1.0, 1.0);
            let expected = b / (a + b);
            let got = m.predict_proba(&[x]).unwrap().class_probs[1];
            assert!((got - expected).abs() < 1e-9, "x={x}: {got} vs {expected}");
        }
    }

    #[test]
    fn zero_variance_feature_is_floored() {
        let ts = TrainingSet::new(
            vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 5.0], vec![1.0, 6.0]],
            vec![0, 0, 1, 1],
            2,
        )
        .unwrap();
        let p = GaussianNb::fit(&ts).predict_proba(&[1.0, 0.5]).unwrap();
        assert!(p.class_probs.iter().all(|v| v.is_finite()));
        assert_eq!(p.predicted, 0);
    }
}
