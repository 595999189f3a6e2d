//! Query strategies: ranked batch-mode scoring, its confidence-weighted
//! extension, a top-positive mix, and plain uncertainty or random picks.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Instance, LabeledExample};
use crate::error::{Error, Result};
use crate::geometry::{agglomerative_clusters, cosine_distance, proximity_from_distance, ClusterAssignment};
use crate::learners::{Classifier, Prediction};
use crate::rng::{sample_positions, stream_rng, TAG_SAMPLER};

/// Larger pools are scored on a uniform subset of this many candidates.
pub const MAX_CANDIDATES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Rbm,
    Edig,
    TopPositiveMix,
    UncertaintyOnly,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Rbm,
        Strategy::Edig,
        Strategy::TopPositiveMix,
        Strategy::UncertaintyOnly,
        Strategy::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Rbm => "rbm",
            Strategy::Edig => "edig",
            Strategy::TopPositiveMix => "top_positive_mix",
            Strategy::UncertaintyOnly => "uncertainty_only",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown strategy '{s}' (expected rbm, edig, top_positive_mix, uncertainty_only or random)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMeasure {
    #[default]
    LeastConfident,
    Margin,
    Entropy,
}

impl FromStr for UncertaintyMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least_confident" => Ok(Self::LeastConfident),
            "margin" => Ok(Self::Margin),
            "entropy" => Ok(Self::Entropy),
            other => Err(Error::invalid(format!("unknown uncertainty measure '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mix {
    pub n_top_positive: usize,
    pub n_uncertain: usize,
    pub n_random: usize,
}

impl Mix {
    pub fn total(&self) -> usize {
        self.n_top_positive + self.n_uncertain + self.n_random
    }

    /// The default 14/3/3 proportions resized to `batch` by largest
    /// remainder (ties favour the earlier part).
    pub fn scaled_to(batch: usize) -> Self {
        let base = Self::default();
        let parts = [base.n_top_positive, base.n_uncertain, base.n_random];
        let whole = base.total();
        let mut counts: Vec<usize> = parts.iter().map(|p| p * batch / whole).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by_key(|&i| std::cmp::Reverse((parts[i] * batch) % whole));
        let short = batch - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        Self {
            n_top_positive: counts[0],
            n_uncertain: counts[1],
            n_random: counts[2],
        }
    }
}

impl Default for Mix {
    fn default() -> Self {
        Self {
            n_top_positive: 14,
            n_uncertain: 3,
            n_random: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    pub beta: f64,
    pub uncertainty_measure: UncertaintyMeasure,
    pub batch_size: usize,
    pub mix: Mix,
    /// Seeds candidate subsampling and random picks.
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Edig,
            beta: 0.5,
            uncertainty_measure: UncertaintyMeasure::LeastConfident,
            batch_size: 5,
            mix: Mix::default(),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn new(strategy: Strategy, batch_size: usize) -> Self {
        Self {
            strategy,
            batch_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if self.strategy == Strategy::TopPositiveMix && self.mix.total() != self.batch_size {
            return Err(Error::invalid(format!(
                "mix {}+{}+{} does not sum to batch_size {}",
                self.mix.n_top_positive, self.mix.n_uncertain, self.mix.n_random, self.batch_size
            )));
        }
        Ok(())
    }
}

/// The labeled set L and the unlabeled id set U for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub labeled: Vec<LabeledExample>,
    /// Sorted ascending.
    pub unlabeled: Vec<String>,
    pub round: usize,
}

impl PoolState {
    pub fn new(labeled: Vec<LabeledExample>, unlabeled: Vec<String>, round: usize) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for ex in &labeled {
            if !seen.insert(ex.instance_id.as_str()) {
                return Err(Error::invalid(format!("'{}' labeled twice", ex.instance_id)));
            }
        }
        let mut unlabeled = unlabeled;
        unlabeled.sort();
        for pair in unlabeled.windows(2) {
            if pair[0] == pair[1] {
                return Err(Error::invalid(format!("'{}' listed twice in the pool", pair[0])));
            }
        }
        if let Some(both) = unlabeled.iter().find(|id| seen.contains(id.as_str())) {
            return Err(Error::invalid(format!("'{both}' is both labeled and unlabeled")));
        }
        Ok(Self {
            labeled,
            unlabeled,
            round,
        })
    }

    /// A pool over every instance of `dataset`, with the given labels.
    pub fn from_dataset(dataset: &Dataset, labeled: Vec<LabeledExample>, round: usize) -> Result<Self> {
        for ex in &labeled {
            dataset.instance(&ex.instance_id)?;
        }
        let taken: BTreeSet<&str> = labeled.iter().map(|e| e.instance_id.as_str()).collect();
        let unlabeled = dataset
            .instances()
            .iter()
            .filter(|i| !taken.contains(i.id.as_str()))
            .map(|i| i.id.clone())
            .collect();
        Self::new(labeled, unlabeled, round)
    }

    /// Moves `example` from U into L.
    pub fn add_label(&mut self, example: LabeledExample) -> Result<()> {
        let pos = self
            .unlabeled
            .binary_search(&example.instance_id)
            .map_err(|_| Error::UnknownInstance(example.instance_id.clone()))?;
        self.unlabeled.remove(pos);
        self.labeled.push(example);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub instance_id: String,
    pub alpha: f64,
    pub diversity_term: f64,
    pub uncertainty_term: f64,
    pub confidence_term: f64,
    pub total: f64,
}

impl ScoreBreakdown {
    fn compose(instance_id: &str, alpha: f64, diversity: f64, uncertainty: f64, confidence: f64) -> Self {
        Self {
            instance_id: instance_id.to_string(),
            alpha,
            diversity_term: diversity,
            uncertainty_term: uncertainty,
            confidence_term: confidence,
            total: alpha * diversity + (1.0 - alpha) * uncertainty + confidence,
        }
    }
}

pub fn write_breakdowns_csv<W: Write>(mut out: W, rows: &[ScoreBreakdown]) -> std::io::Result<()> {
    writeln!(out, "instance_id,alpha,diversity,uncertainty,confidence,total")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.instance_id, r.alpha, r.diversity_term, r.uncertainty_term, r.confidence_term, r.total
        )?;
    }
    Ok(())
}

pub fn uncertainty(prediction: &Prediction, measure: UncertaintyMeasure) -> f64 {
    let p = &prediction.class_probs;
    match measure {
        UncertaintyMeasure::LeastConfident => 1.0 - p.iter().copied().fold(0.0, f64::max),
        UncertaintyMeasure::Margin => {
            let (mut p1, mut p2) = (0.0f64, 0.0f64);
            for &v in p {
                if v > p1 {
                    p2 = p1;
                    p1 = v;
                } else if v > p2 {
                    p2 = v;
                }
            }
            1.0 - (p1 - p2)
        }
        UncertaintyMeasure::Entropy => p
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| -v * v.ln())
            .sum::<f64>()
            .max(0.0),
    }
}

/// `|U| / (|U| + |L|)`.
pub fn alpha_schedule(pool: &PoolState) -> Result<f64> {
    let u = pool.unlabeled.len();
    let total = u + pool.labeled.len();
    if total == 0 {
        return Err(Error::Empty("pool has no instances"));
    }
    Ok(u as f64 / total as f64)
}

/// `1 - max φ(u, l)` over the reference set; 1 when the set is empty.
pub fn diversity_term(u: &Instance, reference: &[&Instance]) -> Result<f64> {
    let mut best = 0.0f64;
    for l in reference {
        best = best.max(proximity_from_distance(cosine_distance(&u.features, &l.features)?));
    }
    Ok(1.0 - best)
}

/// A labeled instance with its labeler confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct LabeledRef<'a> {
    pub instance: &'a Instance,
    pub confidence: f64,
}

/// `1 / (1 + min δ(u,l)·β/(β+conf_l))`; 0 when nothing is labeled.
pub fn confidence_term(u: &Instance, labeled: &[LabeledRef<'_>], beta: f64) -> Result<f64> {
    if labeled.is_empty() {
        return Ok(0.0);
    }
    let mut min_weighted = f64::INFINITY;
    for l in labeled {
        let d = cosine_distance(&u.features, &l.instance.features)?;
        min_weighted = min_weighted.min(d * beta / (beta + l.confidence));
    }
    Ok(1.0 / (1.0 + min_weighted))
}

pub fn score_rbm(
    u: &Instance,
    reference: &[&Instance],
    alpha: f64,
    prediction: &Prediction,
    measure: UncertaintyMeasure,
) -> Result<ScoreBreakdown> {
    let div = diversity_term(u, reference)?;
    Ok(ScoreBreakdown::compose(&u.id, alpha, div, uncertainty(prediction, measure), 0.0))
}

pub fn score_edig(
    u: &Instance,
    labeled: &[LabeledRef<'_>],
    alpha: f64,
    prediction: &Prediction,
    measure: UncertaintyMeasure,
    beta: f64,
) -> Result<ScoreBreakdown> {
    let reference: Vec<&Instance> = labeled.iter().map(|l| l.instance).collect();
    let div = diversity_term(u, &reference)?;
    let conf = confidence_term(u, labeled, beta)?;
    Ok(ScoreBreakdown::compose(&u.id, alpha, div, uncertainty(prediction, measure), conf))
}

/// Result of one round of batch selection.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSelection {
    /// Query order.
    pub ids: Vec<String>,
    /// Breakdown of each queried instance at the moment it was picked,
    /// parallel to `ids`.
    pub picked: Vec<ScoreBreakdown>,
    /// Initial breakdown of every scored candidate, by id.
    pub scored: Vec<ScoreBreakdown>,
    /// Cluster labels over `scored`, when the strategy clusters.
    pub clusters: Option<ClusterAssignment>,
}

struct Candidate<'a> {
    instance: &'a Instance,
    uncertainty: f64,
    positive_prob: f64,
    max_proximity: f64,
    confidence: f64,
}

fn labeled_refs<'a>(dataset: &'a Dataset, pool: &PoolState) -> Result<Vec<LabeledRef<'a>>> {
    pool.labeled
        .iter()
        .map(|ex| {
            Ok(LabeledRef {
                instance: dataset.instance(&ex.instance_id)?,
                confidence: ex.confidence,
            })
        })
        .collect()
}

fn candidate_ids<'p>(pool: &'p PoolState, config: &SamplerConfig) -> Vec<&'p String> {
    if pool.unlabeled.len() <= MAX_CANDIDATES {
        return pool.unlabeled.iter().collect();
    }
    let mut rng = stream_rng(config.seed, TAG_SAMPLER, 2 * pool.round as u64);
    let mut positions = sample_positions(&mut rng, pool.unlabeled.len(), MAX_CANDIDATES);
    positions.sort_unstable();
    positions.into_iter().map(|p| &pool.unlabeled[p]).collect()
}

fn score_candidates<'a, M: Classifier + Sync>(
    dataset: &'a Dataset,
    ids: &[&String],
    labeled: &[LabeledRef<'a>],
    model: &M,
    config: &SamplerConfig,
) -> Result<Vec<Candidate<'a>>> {
    let with_confidence = config.strategy == Strategy::Edig;
    ids.par_iter()
        .map(|id| {
            let instance = dataset.instance(id)?;
            let prediction = model.predict_proba(&instance.features)?;
            let mut max_proximity = 0.0f64;
            let mut min_weighted = f64::INFINITY;
            for l in labeled {
                let d = cosine_distance(&instance.features, &l.instance.features)?;
                max_proximity = max_proximity.max(proximity_from_distance(d));
                min_weighted = min_weighted.min(d * config.beta / (config.beta + l.confidence));
            }
            let confidence = if with_confidence && !labeled.is_empty() {
                1.0 / (1.0 + min_weighted)
            } else {
                0.0
            };
            Ok(Candidate {
                instance,
                uncertainty: uncertainty(&prediction, config.uncertainty_measure),
                positive_prob: prediction.prob(1),
                max_proximity,
                confidence,
            })
        })
        .collect()
}

impl Candidate<'_> {
    fn breakdown(&self, alpha: f64) -> ScoreBreakdown {
        ScoreBreakdown::compose(
            &self.instance.id,
            alpha,
            1.0 - self.max_proximity,
            self.uncertainty,
            self.confidence,
        )
    }
}

/// Higher score first, then lower id.
fn better(a: (f64, &str), b: (f64, &str)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Picks the next batch to query.
///
/// `dataset` must contain every id in `pool` with the features the model
/// was trained on. For the ranked strategies, candidates are clustered into
/// `batch_size` groups and the best-scoring member of each group is taken,
/// best group first; each pick then counts as labeled for the diversity of
/// the groups still open.
pub fn select_batch<M: Classifier + Sync>(
    dataset: &Dataset,
    pool: &PoolState,
    model: &M,
    config: &SamplerConfig,
) -> Result<BatchSelection> {
    config.validate()?;
    if pool.unlabeled.len() < config.batch_size {
        return Err(Error::PoolExhausted {
            available: pool.unlabeled.len(),
            requested: config.batch_size,
        });
    }
    let alpha = alpha_schedule(pool)?;
    let labeled = labeled_refs(dataset, pool)?;

    match config.strategy {
        Strategy::Rbm | Strategy::Edig => {
            let ids = candidate_ids(pool, config);
            let candidates = score_candidates(dataset, &ids, &labeled, model, config)?;
            ranked_batch(candidates, alpha, config.batch_size)
        }
        Strategy::UncertaintyOnly => {
            let ids = candidate_ids(pool, config);
            let candidates = score_candidates(dataset, &ids, &labeled, model, config)?;
            let mut order: Vec<usize> = (0..candidates.len()).collect();
            order.sort_by(|&a, &b| {
                candidates[b]
                    .uncertainty
                    .total_cmp(&candidates[a].uncertainty)
                    .then_with(|| candidates[a].instance.id.cmp(&candidates[b].instance.id))
            });
            order.truncate(config.batch_size);
            Ok(unclustered(&candidates, &order, alpha))
        }
        Strategy::Random => {
            let all: Vec<&String> = pool.unlabeled.iter().collect();
            let candidates = score_candidates(dataset, &all, &labeled, model, config)?;
            let mut rng = stream_rng(config.seed, TAG_SAMPLER, 2 * pool.round as u64 + 1);
            let order = sample_positions(&mut rng, candidates.len(), config.batch_size);
            Ok(unclustered(&candidates, &order, alpha))
        }
        Strategy::TopPositiveMix => {
            let all: Vec<&String> = pool.unlabeled.iter().collect();
            let candidates = score_candidates(dataset, &all, &labeled, model, config)?;
            let order = top_positive_mix_order(&candidates, &config.mix, config.seed, pool.round);
            Ok(unclustered(&candidates, &order, alpha))
        }
    }
}

/// Convenience wrapper returning only the ids of a top-positive mix batch.
pub fn select_top_positive_mix<M: Classifier + Sync>(
    dataset: &Dataset,
    pool: &PoolState,
    model: &M,
    config: &SamplerConfig,
) -> Result<Vec<String>> {
    let config = SamplerConfig {
        strategy: Strategy::TopPositiveMix,
        batch_size: config.mix.total(),
        ..config.clone()
    };
    Ok(select_batch(dataset, pool, model, &config)?.ids)
}

fn unclustered(candidates: &[Candidate<'_>], order: &[usize], alpha: f64) -> BatchSelection {
    BatchSelection {
        ids: order.iter().map(|&i| candidates[i].instance.id.clone()).collect(),
        picked: order.iter().map(|&i| candidates[i].breakdown(alpha)).collect(),
        scored: candidates.iter().map(|c| c.breakdown(alpha)).collect(),
        clusters: None,
    }
}

fn top_positive_mix_order(candidates: &[Candidate<'_>], mix: &Mix, seed: u64, round: usize) -> Vec<usize> {
    let by_id = |a: usize, b: usize| candidates[a].instance.id.cmp(&candidates[b].instance.id);
    let mut taken = vec![false; candidates.len()];
    let mut order = Vec::with_capacity(mix.total());

    let mut by_positive: Vec<usize> = (0..candidates.len()).collect();
    by_positive.sort_by(|&a, &b| {
        candidates[b]
            .positive_prob
            .total_cmp(&candidates[a].positive_prob)
            .then_with(|| by_id(a, b))
    });
    for &i in by_positive.iter().take(mix.n_top_positive) {
        taken[i] = true;
        order.push(i);
    }

    let mut by_uncertainty: Vec<usize> = (0..candidates.len()).filter(|&i| !taken[i]).collect();
    by_uncertainty.sort_by(|&a, &b| {
        candidates[b]
            .uncertainty
            .total_cmp(&candidates[a].uncertainty)
            .then_with(|| by_id(a, b))
    });
    for &i in by_uncertainty.iter().take(mix.n_uncertain) {
        taken[i] = true;
        order.push(i);
    }

    let rest: Vec<usize> = (0..candidates.len()).filter(|&i| !taken[i]).collect();
    let mut rng = stream_rng(seed, TAG_SAMPLER, 2 * round as u64 + 1);
    for p in sample_positions(&mut rng, rest.len(), mix.n_random) {
        order.push(rest[p]);
    }
    order
}

fn ranked_batch(mut candidates: Vec<Candidate<'_>>, alpha: f64, batch_size: usize) -> Result<BatchSelection> {
    let scored: Vec<ScoreBreakdown> = candidates.iter().map(|c| c.breakdown(alpha)).collect();
    let instances: Vec<&Instance> = candidates.iter().map(|c| c.instance).collect();
    let clusters = agglomerative_clusters(&instances, batch_size)?;

    let mut open = vec![true; batch_size];
    let mut picked: Vec<ScoreBreakdown> = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let mut best: Option<(usize, ScoreBreakdown)> = None;
        for (i, c) in candidates.iter().enumerate() {
            if !open[clusters.labels[i]] {
                continue;
            }
            let b = c.breakdown(alpha);
            let wins = match &best {
                None => true,
                Some((_, cur)) => better((b.total, &b.instance_id), (cur.total, &cur.instance_id)),
            };
            if wins {
                best = Some((i, b));
            }
        }
        let (chosen, breakdown) = best.expect("an open cluster has members");
        open[clusters.labels[chosen]] = false;
        let chosen_features = candidates[chosen].instance.features.clone();
        candidates.par_iter_mut().enumerate().for_each(|(i, c)| {
            if open[clusters.labels[i]] {
                let d = cosine_distance(&c.instance.features, &chosen_features).unwrap_or(1.0);
                c.max_proximity = c.max_proximity.max(proximity_from_distance(d));
            }
        });
        picked.push(breakdown);
    }

    picked.sort_by(|a, b| {
        b.total
            .total_cmp(&a.total)
            .then_with(|| a.instance_id.cmp(&b.instance_id))
    });
    Ok(BatchSelection {
        ids: picked.iter().map(|b| b.instance_id.clone()).collect(),
        picked,
        scored,
        clusters: Some(clusters),
    })
}
