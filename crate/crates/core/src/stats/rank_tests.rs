//! Mann–Whitney U, Wilcoxon signed-rank and Jonckheere–Terpstra.
//!
//! Statistics are held internally in half-units (`2 * U`, `2 * W`, `2 * JT`)
//! so that tie credit of one half stays integral and exact p-values compare
//! distribution atoms without floating-point slop.

use std::collections::HashMap;

use super::{normal_p, Method, Tails, TestResult};
use crate::error::{Error, Result};

/// Largest combined sample size `n1 + n2` with an exact Mann–Whitney p.
pub const EXACT_MWU_MAX_N: usize = 12;
/// Largest number of non-zero differences with an exact signed-rank p.
pub const EXACT_WILCOXON_MAX_N: usize = 12;
/// Largest pooled size with an exact Jonckheere–Terpstra p.
pub const EXACT_JT_MAX_N: usize = 10;
// Hard cap for forced exact computation (subset DP over bitmasks).
const JT_EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PMode {
    /// Exact below the size threshold, normal approximation above.
    Auto,
    Exact,
    Normal,
}

/// Twice the mid-ranks of `values` (1-based), so ties stay integral.
fn doubled_midranks(values: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // mean of 1-based ranks i+1..=j+1, doubled
        let doubled = (i + 1 + j + 1) as u64;
        for &p in &order[i..=j] {
            ranks[p] = doubled;
        }
        tie_sizes.push(j - i + 1);
        i = j + 1;
    }
    (ranks, tie_sizes)
}

fn tie_term(tie_sizes: &[usize]) -> f64 {
    tie_sizes
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum()
}

/// Exact tail probability from a null distribution of half-unit atoms.
/// `center` is twice the null mean of the atoms, which keeps it integral.
fn exact_tail(dist: &HashMap<i64, u64>, observed: i64, center: i64, tails: Tails) -> f64 {
    let total: u64 = dist.values().sum();
    let hits: u64 = dist
        .iter()
        .filter(|(&s, _)| match tails {
            Tails::Two => (2 * s - center).abs() >= (2 * observed - center).abs(),
            Tails::Upper => s >= observed,
            Tails::Lower => s <= observed,
        })
        .map(|(_, c)| c)
        .sum();
    (hits as f64 / total as f64).min(1.0)
}

fn check_finite(name: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{name} contains non-finite values")));
    }
    Ok(())
}

/// Two-sided Mann–Whitney U for `x` against `y`; `U` counts pairs with
/// `x > y`, ties credited one half.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<TestResult> {
    mann_whitney_u_with(x, y, PMode::Auto)
}

pub fn mann_whitney_u_with(x: &[f64], y: &[f64], mode: PMode) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Empty("mann-whitney sample"));
    }
    check_finite("x", x)?;
    check_finite("y", y)?;
    let (n1, n2) = (x.len(), y.len());
    let n = n1 + n2;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = doubled_midranks(&pooled);
    let r1_doubled: u64 = ranks[..n1].iter().sum();
    // 2U = 2R1 - n1(n1+1)
    let u2 = r1_doubled as i64 - (n1 * (n1 + 1)) as i64;
    let statistic = u2 as f64 / 2.0;

    let exact = match mode {
        PMode::Auto => n <= EXACT_MWU_MAX_N,
        PMode::Exact => true,
        PMode::Normal => false,
    };
    let (p_value, method) = if exact {
        // Subset-sum DP: number of n1-subsets of the doubled ranks with each sum.
        let max_sum: usize = ranks.iter().map(|&r| r as usize).sum();
        let mut table = vec![vec![0u64; max_sum + 1]; n1 + 1];
        table[0][0] = 1;
        for &r in &ranks {
            let r = r as usize;
            for k in (1..=n1).rev() {
                for s in (r..=max_sum).rev() {
                    table[k][s] += table[k - 1][s - r];
                }
            }
        }
        let offset = (n1 * (n1 + 1)) as i64;
        let dist: HashMap<i64, u64> = table[n1]
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| (s as i64 - offset, c))
            .collect();
        // E[2U] = n1 n2
        let center = 2 * (n1 * n2) as i64;
        (exact_tail(&dist, u2, center, Tails::Two), Method::ExactPermutation)
    } else {
        let mean = (n1 * n2) as f64 / 2.0;
        let nf = n as f64;
        let var = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term(&ties) / (nf * (nf - 1.0)));
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
            normal_p(z, Tails::Two)
        };
        (p, Method::NormalApprox)
    };
    Ok(TestResult {
        statistic,
        p_value,
        method,
        sizes: vec![n1, n2],
        tails: Tails::Two,
    })
}

/// Two-sided Wilcoxon signed-rank test on `x - y`. Zero differences are
/// dropped; `W` is the rank sum of positive differences.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<TestResult> {
    wilcoxon_signed_rank_with(x, y, PMode::Auto)
}

pub fn wilcoxon_signed_rank_with(x: &[f64], y: &[f64], mode: PMode) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "paired samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    check_finite("x", x)?;
    check_finite("y", y)?;
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let n = diffs.len();
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_midranks(&magnitudes);
    let w2: i64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, &r)| r as i64)
        .sum();
    let statistic = w2 as f64 / 2.0;
    let total2: i64 = ranks.iter().map(|&r| r as i64).sum();

    let exact = match mode {
        PMode::Auto => n <= EXACT_WILCOXON_MAX_N,
        PMode::Exact => true,
        PMode::Normal => false,
    };
    let (p_value, method) = if exact {
        let mut counts = vec![0u64; total2 as usize + 1];
        counts[0] = 1;
        for &r in &ranks {
            let r = r as usize;
            for s in (r..counts.len()).rev() {
                counts[s] += counts[s - r];
            }
        }
        let dist: HashMap<i64, u64> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| (s as i64, c))
            .collect();
        // E[2W] = total2 / 2, so 2*E[2W] = total2
        (exact_tail(&dist, w2, total2, Tails::Two), Method::ExactPermutation)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&ties) / 48.0;
        let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
        (normal_p(z, Tails::Two), Method::NormalApprox)
    };
    Ok(TestResult {
        statistic,
        p_value,
        method,
        sizes: vec![n],
        tails: Tails::Two,
    })
}

/// Jonckheere–Terpstra trend test for groups listed in hypothesized
/// increasing order. Two-sided.
pub fn jonckheere_terpstra(groups: &[Vec<f64>]) -> Result<TestResult> {
    jonckheere_terpstra_with(groups, PMode::Auto, Tails::Two)
}

pub fn jonckheere_terpstra_with(groups: &[Vec<f64>], mode: PMode, tails: Tails) -> Result<TestResult> {
    if groups.len() < 2 {
        return Err(Error::Insufficient("trend test needs at least two groups".into()));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::Empty("trend test group"));
    }
    for g in groups {
        check_finite("group", g)?;
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len();
    let group_of: Vec<usize> = sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
        .collect();

    let pair2 = |a: f64, b: f64| -> i64 {
        if a < b {
            2
        } else if a == b {
            1
        } else {
            0
        }
    };
    let mut jt2 = 0i64;
    for i in 0..n {
        for j in 0..n {
            if group_of[i] < group_of[j] {
                jt2 += pair2(pooled[i], pooled[j]);
            }
        }
    }
    let statistic = jt2 as f64 / 2.0;
    let expected2: i64 = {
        let mut e = 0i64;
        for a in 0..sizes.len() {
            for b in a + 1..sizes.len() {
                e += (sizes[a] * sizes[b]) as i64;
            }
        }
        e
    };

    let exact = match mode {
        PMode::Auto => n <= EXACT_JT_MAX_N,
        PMode::Exact => true,
        PMode::Normal => false,
    };
    let (p_value, method) = if exact {
        if n > JT_EXACT_LIMIT {
            return Err(Error::invalid(format!(
                "exact trend test limited to {JT_EXACT_LIMIT} observations"
            )));
        }
        let dist = jt_null_distribution(&pooled, &sizes);
        (exact_tail(&dist, jt2, 2 * expected2, tails), Method::ExactPermutation)
    } else {
        let nf = n as f64;
        let ties = doubled_midranks(&pooled).1;
        let sum_g = |f: &dyn Fn(f64) -> f64| sizes.iter().map(|&s| f(s as f64)).sum::<f64>();
        let sum_t = |f: &dyn Fn(f64) -> f64| ties.iter().map(|&t| f(t as f64)).sum::<f64>();
        let cubic = |v: f64| v * (v - 1.0) * (2.0 * v + 5.0);
        let var = (cubic(nf) - sum_g(&cubic) - sum_t(&cubic)) / 72.0
            + sum_g(&|v| v * (v - 1.0) * (v - 2.0)) * sum_t(&|v| v * (v - 1.0) * (v - 2.0))
                / (36.0 * nf * (nf - 1.0) * (nf - 2.0))
            + sum_g(&|v| v * (v - 1.0)) * sum_t(&|v| v * (v - 1.0)) / (8.0 * nf * (nf - 1.0));
        let mean = expected2 as f64 / 2.0;
        let p = if var <= 0.0 {
            1.0
        } else {
            let z = (statistic - mean) / var.sqrt();
            normal_p(z, tails)
        };
        (p, Method::NormalApprox)
    };
    Ok(TestResult {
        statistic,
        p_value,
        method,
        sizes,
        tails,
    })
}

/// Null distribution of `2 * JT` over all assignments of the pooled items to
/// groups of the given sizes. Groups are filled in order; a state is the
/// bitmask of items not yet assigned (exactly the members of later groups).
fn jt_null_distribution(pooled: &[f64], sizes: &[usize]) -> HashMap<i64, u64> {
    let n = pooled.len();
    let score = |a: usize, b: usize| -> i64 {
        if pooled[a] < pooled[b] {
            2
        } else if pooled[a] == pooled[b] {
            1
        } else {
            0
        }
    };
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let mut states: HashMap<u32, HashMap<i64, u64>> = HashMap::new();
    states.insert(full, HashMap::from([(0, 1)]));
    for &size in &sizes[..sizes.len() - 1] {
        let mut next: HashMap<u32, HashMap<i64, u64>> = HashMap::new();
        for (mask, dist) in &states {
            // enumerate submasks of `mask` with `size` bits
            let mut sub = *mask;
            loop {
                if sub.count_ones() as usize == size {
                    let rest = mask & !sub;
                    let mut contrib = 0i64;
                    for a in (0..n).filter(|a| sub >> a & 1 == 1) {
                        for b in (0..n).filter(|b| rest >> b & 1 == 1) {
                            contrib += score(a, b);
                        }
                    }
                    let entry = next.entry(rest).or_default();
                    for (&s, &c) in dist {
                        *entry.entry(s + contrib).or_default() += c;
                    }
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & mask;
            }
        }
        states = next;
    }
    let mut out: HashMap<i64, u64> = HashMap::new();
    for dist in states.into_values() {
        for (s, c) in dist {
            *out.entry(s).or_default() += c;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mwu_examples() {
        let same = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(same.statistic, 4.5);
        let sep = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(sep.statistic, 0.0);
        assert!((sep.p_value - 0.1).abs() < 1e-12);
        assert_eq!(sep.method, Method::ExactPermutation);
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
    }

    #[test]
    fn mwu_swap_symmetry() {
        let x = [1.0, 3.0, 3.0, 7.0];
        let y = [2.0, 3.0, 8.0];
        let a = mann_whitney_u(&x, &y).unwrap();
        let b = mann_whitney_u(&y, &x).unwrap();
        assert_eq!(a.statistic + b.statistic, 12.0);
        assert!((a.p_value - b.p_value).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y: Vec<f64> = x.iter().map(|v| v + 0.5).collect();
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 2.0 / 64.0).abs() < 1e-15);

        let anti = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((anti.p_value - 1.0).abs() < 1e-12);

        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn jt_examples() {
        let inc = vec![vec![1.0], vec![2.0], vec![3.0]];
        let up = jonckheere_terpstra_with(&inc, PMode::Exact, Tails::Upper).unwrap();
        assert_eq!(up.statistic, 3.0);
        assert!((up.p_value - 1.0 / 6.0).abs() < 1e-15);
        let two = jonckheere_terpstra(&inc).unwrap();
        assert!((two.p_value - 2.0 / 6.0).abs() < 1e-15);

        let dec = vec![vec![3.0], vec![2.0], vec![1.0]];
        assert_eq!(jonckheere_terpstra(&dec).unwrap().statistic, 0.0);

        let same = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]];
        let r = jonckheere_terpstra(&same).unwrap();
        assert_eq!(r.statistic, 6.0);
        assert!(r.p_value > 0.99);

        assert!(jonckheere_terpstra(&[vec![1.0], vec![]]).is_err());
        assert!(jonckheere_terpstra(&[vec![1.0]]).is_err());
    }

    #[test]
    fn normal_branch_activates_above_threshold() {
        let x: Vec<f64> = (0..7).map(|v| v as f64).collect();
        let y: Vec<f64> = (0..6).map(|v| v as f64 + 2.5).collect();
        let r = mann_whitney_u(&x, &y).unwrap();
        assert_eq!(r.method, Method::NormalApprox);
        let exact = mann_whitney_u_with(&x, &y, PMode::Exact).unwrap();
        assert!((r.p_value - exact.p_value).abs() < 0.05);
    }
}
