//! The active-learning loop: seed, query, label, refit, evaluate.

mod experiment;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelSource};
use crate::error::{Error, Result};
use crate::learners::{fit, Classifier, LearnerConfig, Model, TrainingSet};
use crate::oracles::{Oracle, OracleContext, OracleResponse};
use crate::rng::{shuffle, stream_rng, TAG_SEED_LABELS};
use crate::sampling::{select_batch, BatchSelection, PoolState, SamplerConfig, ScoreBreakdown};
use crate::stats::{auprc, f1_precision_recall};

pub use experiment::{
    run_experiment, write_results_csv, Arm, CellRun, DatasetSource, ExperimentConfig, ExperimentResult, ResultRow,
    RunManifest, RESULTS_HEADER,
};

/// Test-set and labeling metrics after a round. Fields are `None` when the
/// quantity cannot be computed (no test set, no ground truth, no positives).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub auprc: Option<f64>,
    pub mean_confidence: Option<f64>,
    pub correct_labels: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 0 for the first query round.
    pub round: usize,
    pub queried_ids: Vec<String>,
    pub responses: Vec<OracleResponse>,
    pub metrics: RoundMetrics,
    pub alpha: f64,
    /// Mean of `(1 - α) · uncertainty` over the queried instances.
    pub mean_weighted_uncertainty: f64,
    /// |L| after the round.
    pub n_labeled: usize,
    /// Score breakdowns of the queried instances, parallel to `queried_ids`.
    pub picked: Vec<ScoreBreakdown>,
    /// Cluster of each queried instance, for clustering strategies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub picked_clusters: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    MaxLabels,
    MinMeanConfidence,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub kind: StopKind,
    #[serde(default)]
    pub threshold: f64,
}

impl StoppingRule {
    pub fn max_labels(n: usize) -> Self {
        Self {
            kind: StopKind::MaxLabels,
            threshold: n as f64,
        }
    }

    pub fn min_mean_confidence(threshold: f64) -> Self {
        Self {
            kind: StopKind::MinMeanConfidence,
            threshold,
        }
    }

    pub fn manual() -> Self {
        Self {
            kind: StopKind::Manual,
            threshold: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            StopKind::MaxLabels => self.threshold >= 1.0 && self.threshold.fract() == 0.0,
            StopKind::MinMeanConfidence => (0.0..=1.0).contains(&self.threshold),
            StopKind::Manual => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid threshold {} for {:?}", self.threshold, self.kind)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum StopDecision {
    Continue,
    Stop { reason: StopKind },
}

/// Number of most recent rounds averaged by the confidence rule.
pub const CONFIDENCE_WINDOW: usize = 2;

/// Checks the rules in order and reports the first that fires.
pub fn evaluate_stopping(
    n_labeled: usize,
    history: &[RoundRecord],
    manual_stop: bool,
    rules: &[StoppingRule],
) -> StopDecision {
    for rule in rules {
        let fired = match rule.kind {
            StopKind::MaxLabels => n_labeled as f64 >= rule.threshold,
            StopKind::MinMeanConfidence => {
                let window = &history[history.len().saturating_sub(CONFIDENCE_WINDOW)..];
                let confs: Vec<f64> = window
                    .iter()
                    .flat_map(|r| r.responses.iter().map(|x| x.confidence))
                    .collect();
                !confs.is_empty() && confs.iter().sum::<f64>() / (confs.len() as f64) < rule.threshold
            }
            StopKind::Manual => manual_stop,
        };
        if fired {
            return StopDecision::Stop { reason: rule.kind };
        }
    }
    StopDecision::Continue
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// At least one instance per class present (by ground truth), the rest
    /// uniformly.
    #[default]
    Stratified,
    Random,
}

/// Chooses and labels the initial set L. Returns the pool with L labeled at
/// round 0 and everything else unlabeled.
pub fn seed_initial_labels(
    train: &Dataset,
    n_seed: usize,
    policy: SeedPolicy,
    oracle: &dyn Oracle,
    seed: u64,
) -> Result<PoolState> {
    if n_seed > train.len() {
        return Err(Error::invalid(format!(
            "n_seed {n_seed} exceeds the {} training instances",
            train.len()
        )));
    }
    let mut rng = stream_rng(seed, TAG_SEED_LABELS, 0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    shuffle(&mut rng, &mut order);

    let mut chosen: Vec<usize> = Vec::with_capacity(n_seed);
    if policy == SeedPolicy::Stratified && n_seed > 0 {
        if n_seed < train.n_classes() {
            return Err(Error::invalid(format!(
                "stratified seeding needs n_seed >= {} classes",
                train.n_classes()
            )));
        }
        for class in 0..train.n_classes() {
            if let Some(&p) = order
                .iter()
                .find(|&&p| train.instances()[p].ground_truth == Some(class))
            {
                chosen.push(p);
            }
        }
    }
    let taken: BTreeSet<usize> = chosen.iter().copied().collect();
    chosen.extend(order.iter().filter(|p| !taken.contains(p)).take(n_seed - chosen.len()));

    let batch: Vec<_> = chosen.iter().map(|&p| &train.instances()[p]).collect();
    let ctx = OracleContext {
        dataset: train,
        labeled: &[],
        round: 0,
        seeding: true,
    };
    let labeled = oracle
        .respond(&batch, &ctx)?
        .iter()
        .map(|r| r.to_labeled(oracle.source(), 0))
        .collect::<Result<Vec<_>>>()?;
    PoolState::from_dataset(train, labeled, 0)
}

/// Fits `learner` on the labeled part of `pool`, or a uniform model when
/// nothing is labeled yet.
pub fn fit_on_pool(train: &Dataset, pool: &PoolState, learner: &LearnerConfig) -> Result<Model> {
    if pool.labeled.is_empty() {
        return Ok(Model::uniform(train.n_features(), train.n_classes()));
    }
    let mut features = Vec::with_capacity(pool.labeled.len());
    let mut labels = Vec::with_capacity(pool.labeled.len());
    for ex in &pool.labeled {
        features.push(train.instance(&ex.instance_id)?.features.clone());
        labels.push(ex.label);
    }
    fit(learner, &TrainingSet::new(features, labels, train.n_classes())?)
}

/// F1, precision, recall (class 1 positive) and AUPRC of `model` on `test`.
pub fn evaluate_model<M: Classifier + Sync>(model: &M, test: &Dataset) -> Result<RoundMetrics> {
    use rayon::prelude::*;
    if test.is_empty() || test.instances().iter().any(|i| i.ground_truth.is_none()) {
        return Ok(RoundMetrics::default());
    }
    let predictions = test
        .instances()
        .par_iter()
        .map(|i| model.predict_proba(&i.features))
        .collect::<Result<Vec<_>>>()?;
    let truths: Vec<usize> = test.instances().iter().map(|i| i.ground_truth.unwrap_or(0)).collect();
    let preds: Vec<usize> = predictions.iter().map(|p| p.predicted).collect();
    let (f1, precision, recall) = f1_precision_recall(&preds, &truths, 1)?;
    let scores: Vec<f64> = predictions.iter().map(|p| p.prob(1)).collect();
    let positives: Vec<bool> = truths.iter().map(|&t| t == 1).collect();
    Ok(RoundMetrics {
        f1: Some(f1),
        precision: Some(precision),
        recall: Some(recall),
        auprc: auprc(&scores, &positives).ok(),
        mean_confidence: None,
        correct_labels: None,
    })
}

/// One active-learning loop over a (standardized) training pool, with an
/// optional held-out test set for metrics.
#[derive(Debug, Clone)]
pub struct ActiveLearner {
    train: Dataset,
    test: Option<Dataset>,
    sampler: SamplerConfig,
    learner: LearnerConfig,
    pool: PoolState,
    model: Model,
    history: Vec<RoundRecord>,
    manual_stop: bool,
}

impl ActiveLearner {
    pub fn new(
        train: Dataset,
        test: Option<Dataset>,
        sampler: SamplerConfig,
        learner: LearnerConfig,
        pool: PoolState,
    ) -> Result<Self> {
        sampler.validate()?;
        learner.validate()?;
        if let Some(t) = &test {
            if t.n_features() != train.n_features() {
                return Err(Error::DimensionMismatch {
                    expected: train.n_features(),
                    actual: t.n_features(),
                });
            }
        }
        if pool.labeled.len() + pool.unlabeled.len() != train.len() {
            return Err(Error::invalid("pool does not cover the training set"));
        }
        let model = fit_on_pool(&train, &pool, &learner)?;
        Ok(Self {
            train,
            test,
            sampler,
            learner,
            pool,
            model,
            history: Vec::new(),
            manual_stop: false,
        })
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn test(&self) -> Option<&Dataset> {
        self.test.as_ref()
    }

    pub fn sampler(&self) -> &SamplerConfig {
        &self.sampler
    }

    pub fn pool(&self) -> &PoolState {
        &self.pool
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    pub(crate) fn last_record_mut(&mut self) -> Option<&mut RoundRecord> {
        self.history.last_mut()
    }

    /// Index of the next query round.
    pub fn round(&self) -> usize {
        self.pool.round
    }

    pub fn stop_manually(&mut self) {
        self.manual_stop = true;
    }

    pub fn stopped_manually(&self) -> bool {
        self.manual_stop
    }

    pub fn evaluate_stopping(&self, rules: &[StoppingRule]) -> StopDecision {
        evaluate_stopping(self.pool.labeled.len(), &self.history, self.manual_stop, rules)
    }

    /// Metrics of the current model on the test set.
    pub fn evaluate(&self) -> Result<RoundMetrics> {
        match &self.test {
            Some(t) => evaluate_model(&self.model, t),
            None => Ok(RoundMetrics::default()),
        }
    }

    /// Picks the next batch without changing any state.
    pub fn propose(&self) -> Result<BatchSelection> {
        select_batch(&self.train, &self.pool, &self.model, &self.sampler)
    }

    /// Applies answers for `selection`, refits and records the round. On
    /// error nothing changes.
    pub fn complete(
        &mut self,
        selection: &BatchSelection,
        responses: Vec<OracleResponse>,
        source: LabelSource,
    ) -> Result<&RoundRecord> {
        if responses.len() != selection.ids.len()
            || responses.iter().zip(&selection.ids).any(|(r, id)| &r.instance_id != id)
        {
            return Err(Error::invalid("responses do not match the proposed batch"));
        }
        for r in &responses {
            if r.label >= self.train.n_classes() {
                return Err(Error::invalid(format!("label {} outside 0..{}", r.label, self.train.n_classes())));
            }
        }
        let round = self.pool.round;
        let alpha = selection.picked.first().map(|b| b.alpha).unwrap_or(1.0);

        let mut pool = self.pool.clone();
        for r in &responses {
            pool.add_label(r.to_labeled(source, round)?)?;
        }
        pool.round += 1;
        let model = fit_on_pool(&self.train, &pool, &self.learner)?;
        let mut metrics = match &self.test {
            Some(t) => evaluate_model(&model, t)?,
            None => RoundMetrics::default(),
        };
        if !responses.is_empty() {
            metrics.mean_confidence =
                Some(responses.iter().map(|r| r.confidence).sum::<f64>() / responses.len() as f64);
        }
        let truths: Option<Vec<usize>> = responses
            .iter()
            .map(|r| self.train.get(&r.instance_id).and_then(|i| i.ground_truth))
            .collect();
        metrics.correct_labels =
            truths.map(|t| t.iter().zip(&responses).filter(|(t, r)| **t == r.label).count());

        let weighted: f64 = selection
            .picked
            .iter()
            .map(|b| (1.0 - b.alpha) * b.uncertainty_term)
            .sum::<f64>();
        let picked_clusters = selection.clusters.as_ref().map(|c| {
            selection
                .ids
                .iter()
                .map(|id| {
                    let pos = selection.scored.iter().position(|b| &b.instance_id == id).unwrap_or(0);
                    c.labels[pos]
                })
                .collect()
        });
        let record = RoundRecord {
            round,
            queried_ids: selection.ids.clone(),
            responses,
            metrics,
            alpha,
            mean_weighted_uncertainty: if selection.picked.is_empty() {
                0.0
            } else {
                weighted / selection.picked.len() as f64
            },
            n_labeled: pool.labeled.len(),
            picked: selection.picked.clone(),
            picked_clusters,
        };
        self.pool = pool;
        self.model = model;
        self.history.push(record);
        Ok(self.history.last().expect("just pushed"))
    }

    /// Propose, ask `oracle`, complete.
    pub fn run_round(&mut self, oracle: &dyn Oracle) -> Result<&RoundRecord> {
        let selection = self.propose()?;
        let batch = selection
            .ids
            .iter()
            .map(|id| self.train.instance(id))
            .collect::<Result<Vec<_>>>()?;
        let ctx = OracleContext {
            dataset: &self.train,
            labeled: &self.pool.labeled,
            round: self.pool.round,
            seeding: false,
        };
        let responses = oracle.respond(&batch, &ctx)?;
        self.complete(&selection, responses, oracle.source())
    }
}
