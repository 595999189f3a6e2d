use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{normal_p, Method, Tails, TestResult};
use crate::error::{Error, Result};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson correlation with a two-sided t-test on `n - 2` degrees of freedom.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Insufficient("pearson correlation needs n >= 3".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("constant input has no correlation".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if 1.0 - r.abs() < 1e-15 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
        (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
    };
    Ok(TestResult {
        statistic: r,
        p_value,
        method: Method::TDist,
        sizes: vec![n],
        tails: Tails::Two,
    })
}

/// Fisher z test for a difference between two independent correlations.
pub fn fisher_z_compare(r1: f64, n1: usize, r2: f64, n2: usize) -> Result<TestResult> {
    for r in [r1, r2] {
        if r.is_nan() || r.abs() >= 1.0 {
            return Err(Error::Degenerate(format!("correlation {r} has no Fisher transform")));
        }
    }
    if n1 < 4 || n2 < 4 {
        return Err(Error::Insufficient("fisher z test needs n >= 4 per sample".into()));
    }
    let se = (1.0 / (n1 as f64 - 3.0) + 1.0 / (n2 as f64 - 3.0)).sqrt();
    let z = (r1.atanh() - r2.atanh()) / se;
    Ok(TestResult {
        statistic: z,
        p_value: normal_p(z, Tails::Two),
        method: Method::NormalApprox,
        sizes: vec![n1, n2],
        tails: Tails::Two,
    })
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid("samples differ in length"));
    }
    if x.len() < 2 {
        return Err(Error::Insufficient("slope needs n >= 2".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("constant x has no slope".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}
