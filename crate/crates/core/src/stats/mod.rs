//! Evaluation metrics, agreement coefficients and hypothesis tests.
//!
//! Rank tests compute exact permutation p-values on small samples by
//! counting the null distribution of the statistic in half-units (integer
//! arithmetic, so ties at 0.5 are exact) and fall back to a tie-corrected
//! normal approximation above the exact-size threshold.

mod agreement;
mod correlation;
mod metrics;
mod rank_tests;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub use agreement::{krippendorff_alpha, MeasurementLevel};
pub use correlation::{fisher_z_compare, ols_slope, pearson_r};
pub use metrics::{auprc, f1_precision_recall};
pub use rank_tests::{
    jonckheere_terpstra, jonckheere_terpstra_with, mann_whitney_u, mann_whitney_u_with,
    wilcoxon_signed_rank, wilcoxon_signed_rank_with, PMode, EXACT_JT_MAX_N, EXACT_MWU_MAX_N,
    EXACT_WILCOXON_MAX_N,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactPermutation,
    NormalApprox,
    TDist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tails {
    Two,
    /// Alternative: statistic larger than expected under the null.
    Upper,
    /// Alternative: statistic smaller than expected under the null.
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    /// Sample sizes: `[n]`, `[n1, n2]` or one entry per group.
    pub sizes: Vec<usize>,
    pub tails: Tails,
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Tail probability for a standardized statistic.
pub(crate) fn normal_p(z: f64, tails: Tails) -> f64 {
    let n = standard_normal();
    let p = match tails {
        Tails::Two => 2.0 * n.sf(z.abs()),
        Tails::Upper => n.sf(z),
        Tails::Lower => n.cdf(z),
    };
    p.clamp(0.0, 1.0)
}
