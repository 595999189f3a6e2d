//! Distances, proximity, and agglomerative clustering of candidate pools.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{Error, Result};

/// `1 - cos(a, b)`, in `[0, 2]`. A zero vector is at distance 1 from
/// everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(cosine_distance_unchecked(a, b))
}

pub(crate) fn cosine_distance_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0)
}

/// Similarity from a distance: `1 / (1 + δ)`.
pub fn proximity_from_distance(distance: f64) -> f64 {
    1.0 / (1.0 + distance)
}

pub fn proximity(u: &Instance, l: &Instance) -> Result<f64> {
    cosine_distance(&u.features, &l.features).map(proximity_from_distance)
}

/// Condensed pairwise distances (row-major upper triangle, diagonal omitted).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    condensed: Vec<f64>,
}

impl DistanceMatrix {
    pub fn cosine(points: &[&[f64]]) -> Result<Self> {
        let n = points.len();
        if let Some(first) = points.first() {
            if let Some(bad) = points.iter().find(|p| p.len() != first.len()) {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    actual: bad.len(),
                });
            }
        }
        let condensed = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                (i + 1..n).map(move |j| cosine_distance_unchecked(points[i], points[j]))
            })
            .collect();
        Ok(Self { n, condensed })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.condensed[self.offset(i, j)],
            std::cmp::Ordering::Greater => self.condensed[self.offset(j, i)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }
}

/// Average-linkage agglomerative clustering on cosine distance, merged
/// bottom-up until `k` clusters remain.
///
/// Instances are first put in canonical order by id; the closest pair is
/// merged each step, with ties going to the lexicographically lowest pair
/// of canonical indices. Cluster ids follow each cluster's smallest member
/// id, so the result does not depend on input order.
pub fn agglomerative_clusters(instances: &[&Instance], k: usize) -> Result<ClusterAssignment> {
    let n = instances.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "cannot form {k} clusters from {n} instances"
        )));
    }
    let mut canonical: Vec<usize> = (0..n).collect();
    canonical.sort_by(|&a, &b| instances[a].id.cmp(&instances[b].id));
    let points: Vec<&[f64]> = canonical.iter().map(|&i| instances[i].features.as_slice()).collect();
    let dist = DistanceMatrix::cosine(&points)?;
    let canon_labels = renumber_by_first_member(&average_linkage(&dist, k));

    let mut labels = vec![0; n];
    for (c, &orig) in canonical.iter().enumerate() {
        labels[orig] = canon_labels[c];
    }
    Ok(ClusterAssignment { labels, k })
}

fn renumber_by_first_member(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Greedy average linkage with cached nearest neighbours. Returns a label
/// per point (arbitrary numbering).
fn average_linkage(dist: &DistanceMatrix, k: usize) -> Vec<usize> {
    let n = dist.len();
    let mut d = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = dist.get(i, j);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();

    // nearest active cluster with a larger index, ties to the lowest index
    let nearest_above = |i: usize, d: &[f64], active: &[bool]| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for j in i + 1..n {
            if active[j] && best.is_none_or(|(bd, _)| d[i * n + j] < bd) {
                best = Some((d[i * n + j], j));
            }
        }
        best
    };
    let mut nn: Vec<Option<(f64, usize)>> = (0..n).map(|i| nearest_above(i, &d, &active)).collect();

    for _ in 0..n - k {
        let mut pick: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some((dv, j)) = nn[i] {
                if pick.is_none_or(|(pd, _, _)| dv < pd) {
                    pick = Some((dv, i, j));
                }
            }
        }
        let (_, a, b) = pick.expect("at least two active clusters");

        // merge b into a (a < b)
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for m in 0..n {
            if active[m] && m != a && m != b {
                let v = (sa * d[a * n + m] + sb * d[b * n + m]) / (sa + sb);
                d[a * n + m] = v;
                d[m * n + a] = v;
            }
        }
        size[a] += size[b];
        active[b] = false;
        nn[b] = None;
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }

        for r in 0..n {
            if !active[r] {
                continue;
            }
            let stale = matches!(nn[r], Some((_, j)) if j == a || j == b);
            if r == a || stale {
                nn[r] = nearest_above(r, &d, &active);
            } else if r < a {
                let v = d[r * n + a];
                if let Some((bd, bj)) = nn[r] {
                    if v < bd || (v == bd && a < bj) {
                        nn[r] = Some((v, a));
                    }
                }
            }
        }
    }
    owner
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inst(id: &str, f: &[f64]) -> Instance {
        Instance::new(id, f.to_vec())
    }

    #[test]
    fn cosine_examples() {
        assert!(cosine_distance(&[3.0, -1.0], &[3.0, -1.0]).unwrap().abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_distance(&[1.0, 1.0], &[-1.0, -1.0]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(cosine_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn proximity_examples() {
        assert_eq!(proximity_from_distance(0.0), 1.0);
        assert_eq!(proximity_from_distance(1.0), 0.5);
        assert!((proximity_from_distance(2.0) - 1.0 / 3.0).abs() < 1e-15);
        let p = proximity(&inst("a", &[1.0, 0.0]), &inst("b", &[0.0, 1.0])).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn condensed_indexing() {
        let pts: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![1.0, 1.0]];
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let m = DistanceMatrix::cosine(&refs).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let direct = if i == j { 0.0 } else { cosine_distance(&pts[i], &pts[j]).unwrap() };
                assert_eq!(m.get(i, j), direct);
            }
        }
    }

    #[test]
    fn singleton_and_trivial_cases() {
        let pts = [
            inst("a", &[1.0, 0.0, 0.0]),
            inst("b", &[0.0, 1.0, 0.0]),
            inst("c", &[0.0, 0.0, 1.0]),
            inst("d", &[-1.0, 0.0, 0.0]),
            inst("e", &[0.0, -1.0, 0.0]),
        ];
        let refs: Vec<&Instance> = pts.iter().collect();
        let c = agglomerative_clusters(&refs, 5).unwrap();
        assert_eq!(c.labels, vec![0, 1, 2, 3, 4]);
        let one = [inst("x", &[1.0])];
        let c = agglomerative_clusters(&[&one[0]], 1).unwrap();
        assert_eq!(c.labels, vec![0]);
        assert!(agglomerative_clusters(&refs, 6).is_err());
        assert!(agglomerative_clusters(&refs, 0).is_err());
    }

    // Exhaustive search over all 2-partitions minimizing the mean
    // within-cluster pairwise distance.
    fn best_two_partition(points: &[Vec<f64>]) -> Vec<usize> {
        let n = points.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << (n - 1)) {
            let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
            let (mut total, mut pairs) = (0.0, 0);
            for i in 0..n {
                for j in i + 1..n {
                    if labels[i] == labels[j] {
                        total += cosine_distance(&points[i], &points[j]).unwrap();
                        pairs += 1;
                    }
                }
            }
            let score = if pairs == 0 { 0.0 } else { total / pairs as f64 };
            if score < best.0 {
                best = (score, labels);
            }
        }
        renumber_by_first_member(&best.1)
    }

    #[test]
    fn two_blobs_recovered() {
        let points: Vec<Vec<f64>> = vec![
            vec![1.0, 0.1],
            vec![0.95, 0.12],
            vec![1.02, 0.05],
            vec![0.1, 1.0],
            vec![0.08, 0.97],
            vec![0.12, 1.05],
            vec![0.0, 0.99],
        ];
        let owned: Vec<Instance> = points
            .iter()
            .enumerate()
            .map(|(i, p)| inst(&format!("p{i}"), p))
            .collect();
        let refs: Vec<&Instance> = owned.iter().collect();
        let got = agglomerative_clusters(&refs, 2).unwrap();
        assert_eq!(got.labels, best_two_partition(&points));
        assert_eq!(got.labels, vec![0, 0, 0, 1, 1, 1, 1]);
    }

    /// Reference average linkage: recompute every cluster-pair distance from
    /// the original points at each step.
    pub(crate) fn naive_average_linkage(points: &[Vec<f64>], k: usize) -> Vec<usize> {
        let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
        let link = |a: &[usize], b: &[usize]| -> f64 {
            let mut s = 0.0;
            for &i in a {
                for &j in b {
                    s += cosine_distance(&points[i], &points[j]).unwrap();
                }
            }
            s / (a.len() * b.len()) as f64
        };
        while clusters.len() > k {
            let mut best = (f64::INFINITY, 0, 0);
            for a in 0..clusters.len() {
                for b in a + 1..clusters.len() {
                    let d = link(&clusters[a], &clusters[b]);
                    if d < best.0 {
                        best = (d, a, b);
                    }
                }
            }
            let merged = clusters.remove(best.2);
            clusters[best.1].extend(merged);
        }
        let mut labels = vec![0; points.len()];
        for (c, members) in clusters.iter().enumerate() {
            for &m in members {
                labels[m] = c;
            }
        }
        renumber_by_first_member(&labels)
    }

    fn points_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
        (2usize..=8).prop_flat_map(|n| {
            (
                proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), n),
                1..=n,
            )
        })
    }

    proptest! {
        #[test]
        fn matches_naive_reference((points, k) in points_strategy()) {
            // ids sort in index order, so canonical order == input order
            let owned: Vec<Instance> = points.iter().enumerate()
                .map(|(i, p)| inst(&format!("p{i}"), p)).collect();
            let refs: Vec<&Instance> = owned.iter().collect();
            let got = agglomerative_clusters(&refs, k).unwrap();
            prop_assert_eq!(got.labels, naive_average_linkage(&points, k));
        }

        #[test]
        fn order_invariant((points, k) in points_strategy(), seed in 0u64..1000) {
            let owned: Vec<Instance> = points.iter().enumerate()
                .map(|(i, p)| inst(&format!("p{i}"), p)).collect();
            let mut perm: Vec<usize> = (0..owned.len()).collect();
            crate::rng::shuffle(&mut crate::rng::stream_rng(seed, 0, 0), &mut perm);
            let refs: Vec<&Instance> = owned.iter().collect();
            let shuffled: Vec<&Instance> = perm.iter().map(|&i| &owned[i]).collect();
            let a = agglomerative_clusters(&refs, k).unwrap();
            let b = agglomerative_clusters(&shuffled, k).unwrap();
            // same partition up to renaming
            for x in 0..perm.len() {
                for y in 0..perm.len() {
                    prop_assert_eq!(
                        a.labels[perm[x]] == a.labels[perm[y]],
                        b.labels[x] == b.labels[y]
                    );
                }
            }
            let distinct: std::collections::HashSet<_> = a.labels.iter().collect();
            prop_assert_eq!(distinct.len(), k);
        }
    }
}
