//! Label providers: ground truth, a simulated labeler whose confidence
//! tracks a companion model, a noisy labeler with uninformative confidence,
//! and a deferred batch answered by people through a session.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{canonical_confidence, ClassLabel, Dataset, Instance, LabelSource, LabeledExample};
use crate::error::{Error, Result};
use crate::learners::{fit, Classifier, LearnerConfig, TrainingSet};
use crate::rng::{derive_seed, stream_rng, StreamRng, TAG_COMPANION, TAG_ORACLE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub instance_id: String,
    pub label: ClassLabel,
    pub confidence: f64,
    pub latency_rounds: usize,
}

impl OracleResponse {
    pub fn to_labeled(&self, source: LabelSource, round: usize) -> Result<LabeledExample> {
        LabeledExample::new(self.instance_id.clone(), self.label, self.confidence, source, round)
    }
}

/// What an oracle may look at when answering.
#[derive(Debug, Clone, Copy)]
pub struct OracleContext<'a> {
    /// Features as seen by the learner.
    pub dataset: &'a Dataset,
    pub labeled: &'a [LabeledExample],
    pub round: usize,
    /// True while labeling the initial seed set, before any query round.
    pub seeding: bool,
}

impl OracleContext<'_> {
    fn stream_index(&self) -> u64 {
        if self.seeding {
            0
        } else {
            self.round as u64 + 1
        }
    }
}

pub trait Oracle: Send + Sync {
    fn source(&self) -> LabelSource;

    /// One response per instance, in batch order.
    fn respond(&self, batch: &[&Instance], ctx: &OracleContext<'_>) -> Result<Vec<OracleResponse>>;
}

fn truth(instance: &Instance) -> Result<ClassLabel> {
    instance
        .ground_truth
        .ok_or_else(|| Error::MissingGroundTruth(instance.id.clone()))
}

fn wrong_label<R: Rng + ?Sized>(truth: ClassLabel, n_classes: usize, rng: &mut R) -> ClassLabel {
    let offset = 1 + rng.random_range(0..(n_classes as u64 - 1)) as usize;
    (truth + offset) % n_classes
}

pub fn ground_truth_oracle(instance: &Instance) -> Result<OracleResponse> {
    Ok(OracleResponse {
        instance_id: instance.id.clone(),
        label: truth(instance)?,
        confidence: 1.0,
        latency_rounds: 0,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GroundTruthOracle;

impl Oracle for GroundTruthOracle {
    fn source(&self) -> LabelSource {
        LabelSource::GroundTruth
    }

    fn respond(&self, batch: &[&Instance], _ctx: &OracleContext<'_>) -> Result<Vec<OracleResponse>> {
        batch.iter().map(|i| ground_truth_oracle(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOracleConfig {
    pub clamp_lo: f64,
    pub clamp_hi: f64,
    pub noise_halfwidth: f64,
    pub companion_learner: LearnerConfig,
    /// Label flip probability at confidence `clamp_lo`, falling linearly to
    /// zero at `clamp_hi`.
    pub error_rate_at_min_confidence: f64,
    pub seed: u64,
}

impl Default for SimOracleConfig {
    fn default() -> Self {
        Self {
            clamp_lo: 0.3,
            clamp_hi: 0.8,
            noise_halfwidth: 0.2,
            companion_learner: LearnerConfig::default(),
            error_rate_at_min_confidence: 0.0,
            seed: 0,
        }
    }
}

impl SimOracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.clamp_lo && self.clamp_lo < self.clamp_hi && self.clamp_hi <= 1.0) {
            return Err(Error::invalid(format!(
                "clamp range [{}, {}] must satisfy 0 <= lo < hi <= 1",
                self.clamp_lo, self.clamp_hi
            )));
        }
        if !(self.noise_halfwidth >= 0.0 && self.noise_halfwidth.is_finite()) {
            return Err(Error::invalid("noise_halfwidth must be non-negative"));
        }
        if !(0.0..=0.5).contains(&self.error_rate_at_min_confidence) {
            return Err(Error::invalid(format!(
                "error_rate_at_min_confidence {} outside [0, 0.5]",
                self.error_rate_at_min_confidence
            )));
        }
        self.companion_learner.validate()
    }

    /// Raw confidence used before a companion model exists.
    pub fn initial_confidence(&self) -> f64 {
        (self.clamp_lo + self.clamp_hi) / 2.0
    }

    pub fn flip_probability(&self, clamped: f64) -> f64 {
        let span = self.clamp_hi - self.clamp_lo;
        (self.error_rate_at_min_confidence * (self.clamp_hi - clamped) / span).clamp(0.0, 1.0)
    }
}

/// Turns a raw confidence into a simulated response: clamp into the
/// configured range, decide whether the label errs, then add uniform noise
/// and clamp into `[0, 1]`.
pub fn simulated_response<R: Rng + ?Sized>(
    instance: &Instance,
    raw_confidence: f64,
    n_classes: usize,
    config: &SimOracleConfig,
    rng: &mut R,
) -> Result<OracleResponse> {
    let truth = truth(instance)?;
    let clamped = raw_confidence.clamp(config.clamp_lo, config.clamp_hi);
    let flip = rng.random::<f64>() < config.flip_probability(clamped);
    let noise = if config.noise_halfwidth > 0.0 {
        rng.random_range(-config.noise_halfwidth..=config.noise_halfwidth)
    } else {
        0.0
    };
    let label = if flip { wrong_label(truth, n_classes, rng) } else { truth };
    Ok(OracleResponse {
        instance_id: instance.id.clone(),
        label,
        confidence: (clamped + noise).clamp(0.0, 1.0),
        latency_rounds: 0,
    })
}

#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    pub config: SimOracleConfig,
}

impl SimulatedOracle {
    pub fn new(config: SimOracleConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    fn raw_confidences(&self, batch: &[&Instance], ctx: &OracleContext<'_>) -> Result<Vec<f64>> {
        if ctx.seeding || ctx.round == 0 || ctx.labeled.is_empty() {
            return Ok(vec![self.config.initial_confidence(); batch.len()]);
        }
        let mut features = Vec::with_capacity(ctx.labeled.len());
        let mut labels = Vec::with_capacity(ctx.labeled.len());
        for ex in ctx.labeled {
            features.push(ctx.dataset.instance(&ex.instance_id)?.features.clone());
            labels.push(ex.label);
        }
        let train = TrainingSet::new(features, labels, ctx.dataset.n_classes())?;
        let learner = LearnerConfig {
            seed: derive_seed(self.config.seed, TAG_COMPANION, ctx.round as u64),
            ..self.config.companion_learner.clone()
        };
        let companion = fit(&learner, &train)?;
        batch
            .iter()
            .map(|i| Ok(companion.predict_proba(&i.features)?.max_prob()))
            .collect()
    }
}

impl Oracle for SimulatedOracle {
    fn source(&self) -> LabelSource {
        LabelSource::Simulated
    }

    fn respond(&self, batch: &[&Instance], ctx: &OracleContext<'_>) -> Result<Vec<OracleResponse>> {
        let raw = self.raw_confidences(batch, ctx)?;
        let mut rng = stream_rng(self.config.seed, TAG_ORACLE, ctx.stream_index());
        batch
            .iter()
            .zip(raw)
            .map(|(inst, r)| simulated_response(inst, r, ctx.dataset.n_classes(), &self.config, &mut rng))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfidenceDist {
    Uniform { lo: f64, hi: f64 },
    Fixed { value: f64 },
}

impl ConfidenceDist {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ConfidenceDist::Uniform { lo, hi } => (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi,
            ConfidenceDist::Fixed { value } => (0.0..=1.0).contains(&value),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("confidence distribution {self:?} leaves [0, 1]")))
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ConfidenceDist::Uniform { lo, hi } => rng.random_range(lo..=hi),
            ConfidenceDist::Fixed { value } => value,
        }
    }
}

impl Default for ConfidenceDist {
    fn default() -> Self {
        ConfidenceDist::Uniform { lo: 0.0, hi: 1.0 }
    }
}

/// Flips the true label with `flip_prob` and reports a confidence drawn
/// independently of whether the label is right.
pub fn noisy_oracle<R: Rng + ?Sized>(
    instance: &Instance,
    n_classes: usize,
    flip_prob: f64,
    confidence: &ConfidenceDist,
    rng: &mut R,
) -> Result<OracleResponse> {
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(Error::invalid(format!("flip_prob {flip_prob} outside [0, 1]")));
    }
    let truth = truth(instance)?;
    let flip = rng.random::<f64>() < flip_prob;
    let conf = confidence.sample(rng);
    let label = if flip { wrong_label(truth, n_classes, rng) } else { truth };
    Ok(OracleResponse {
        instance_id: instance.id.clone(),
        label,
        confidence: conf,
        latency_rounds: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoisyOracleConfig {
    pub flip_prob: f64,
    pub confidence: ConfidenceDist,
    pub seed: u64,
}

impl Default for NoisyOracleConfig {
    fn default() -> Self {
        Self {
            flip_prob: 0.1,
            confidence: ConfidenceDist::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoisyOracle {
    pub config: NoisyOracleConfig,
}

impl NoisyOracle {
    pub fn new(config: NoisyOracleConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.flip_prob) {
            return Err(Error::invalid(format!("flip_prob {} outside [0, 1]", config.flip_prob)));
        }
        config.confidence.validate()?;
        Ok(Self { config })
    }
}

impl Oracle for NoisyOracle {
    fn source(&self) -> LabelSource {
        LabelSource::Simulated
    }

    fn respond(&self, batch: &[&Instance], ctx: &OracleContext<'_>) -> Result<Vec<OracleResponse>> {
        let mut rng: StreamRng = stream_rng(self.config.seed, TAG_ORACLE, ctx.stream_index());
        batch
            .iter()
            .map(|i| {
                noisy_oracle(
                    i,
                    ctx.dataset.n_classes(),
                    self.config.flip_prob,
                    &self.config.confidence,
                    &mut rng,
                )
            })
            .collect()
    }
}

/// Serializable choice of immediate oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    GroundTruth,
    Simulated(SimOracleConfig),
    Noisy(NoisyOracleConfig),
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec::Simulated(SimOracleConfig::default())
    }
}

impl OracleSpec {
    pub fn build(&self) -> Result<Box<dyn Oracle>> {
        Ok(match self {
            OracleSpec::GroundTruth => Box::new(GroundTruthOracle),
            OracleSpec::Simulated(c) => Box::new(SimulatedOracle::new(c.clone())?),
            OracleSpec::Noisy(c) => Box::new(NoisyOracle::new(c.clone())?),
        })
    }

    /// The same oracle with its random seed replaced.
    pub fn reseeded(&self, seed: u64) -> Self {
        match self {
            OracleSpec::GroundTruth => OracleSpec::GroundTruth,
            OracleSpec::Simulated(c) => OracleSpec::Simulated(SimOracleConfig { seed, ..c.clone() }),
            OracleSpec::Noisy(c) => OracleSpec::Noisy(NoisyOracleConfig { seed, ..c.clone() }),
        }
    }
}

#[derive(Debug)]
struct DeferredState {
    order: Vec<String>,
    n_classes: usize,
    responses: BTreeMap<String, OracleResponse>,
    closed: bool,
}

impl DeferredState {
    fn complete(&self) -> bool {
        self.responses.len() == self.order.len()
    }

    fn collect(&self) -> Vec<OracleResponse> {
        self.order.iter().map(|id| self.responses[id].clone()).collect()
    }
}

/// A batch waiting on human answers. Clones share the same batch; the
/// first valid answer per instance wins.
#[derive(Debug, Clone)]
pub struct DeferredBatch {
    shared: Arc<(Mutex<DeferredState>, Condvar)>,
}

pub fn deferred_oracle(batch: Vec<String>, n_classes: usize) -> DeferredBatch {
    DeferredBatch {
        shared: Arc::new((
            Mutex::new(DeferredState {
                order: batch,
                n_classes,
                responses: BTreeMap::new(),
                closed: false,
            }),
            Condvar::new(),
        )),
    }
}

impl DeferredBatch {
    fn lock(&self) -> std::sync::MutexGuard<'_, DeferredState> {
        self.shared.0.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn ids(&self) -> Vec<String> {
        self.lock().order.clone()
    }

    /// Records an answer with a 0–10 confidence rating. Returns whether the
    /// batch is now complete.
    pub fn submit(&self, instance_id: &str, label: ClassLabel, rating: i64) -> Result<bool> {
        let mut state = self.lock();
        if state.closed {
            return Err(Error::SessionClosed);
        }
        if !state.order.iter().any(|id| id == instance_id) {
            return Err(Error::UnknownInstance(instance_id.to_string()));
        }
        if label >= state.n_classes {
            return Err(Error::invalid(format!(
                "label {label} outside 0..{}",
                state.n_classes
            )));
        }
        let confidence = canonical_confidence(rating)?;
        if state.responses.contains_key(instance_id) {
            return Err(Error::DuplicateSubmission(instance_id.to_string()));
        }
        state.responses.insert(
            instance_id.to_string(),
            OracleResponse {
                instance_id: instance_id.to_string(),
                label,
                confidence,
                latency_rounds: 0,
            },
        );
        let done = state.complete();
        if done {
            self.shared.1.notify_all();
        }
        Ok(done)
    }

    pub fn pending(&self) -> Vec<String> {
        let state = self.lock();
        state
            .order
            .iter()
            .filter(|id| !state.responses.contains_key(*id))
            .cloned()
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        self.lock().complete()
    }

    /// Responses in batch order, if every item has been answered.
    pub fn try_collect(&self) -> Option<Vec<OracleResponse>> {
        let state = self.lock();
        state.complete().then(|| state.collect())
    }

    pub fn close(&self) {
        self.lock().closed = true;
        self.shared.1.notify_all();
    }

    /// Blocks until the batch is complete or closed.
    pub fn wait(&self) -> Result<Vec<OracleResponse>> {
        let mut state = self.lock();
        loop {
            if state.complete() {
                return Ok(state.collect());
            }
            if state.closed {
                return Err(Error::SessionClosed);
            }
            state = self.shared.1.wait(state).unwrap_or_else(|p| p.into_inner());
        }
    }

    /// Like [`wait`](Self::wait) but gives up after `timeout`.
    pub fn wait_timeout(&self, timeout: Duration) -> Result<Option<Vec<OracleResponse>>> {
        let state = self.lock();
        let (state, _) = self
            .shared
            .1
            .wait_timeout_while(state, timeout, |s| !s.complete() && !s.closed)
            .unwrap_or_else(|p| p.into_inner());
        if state.complete() {
            Ok(Some(state.collect()))
        } else if state.closed {
            Err(Error::SessionClosed)
        } else {
            Ok(None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled_instance(id: &str, truth: usize) -> Instance {
        Instance::new(id, vec![0.0, 1.0]).with_truth(truth)
    }

    #[test]
    fn ground_truth_examples() {
        let r = ground_truth_oracle(&labeled_instance("a", 1)).unwrap();
        assert_eq!((r.label, r.confidence), (1, 1.0));
        assert!(ground_truth_oracle(&Instance::new("b", vec![1.0])).is_err());

        let batch: Vec<Instance> = (0..5).map(|i| labeled_instance(&format!("i{i}"), i % 2)).collect();
        let refs: Vec<&Instance> = batch.iter().collect();
        let ds = Dataset::new("d", vec!["x".into(), "y".into()], batch.clone(), 2).unwrap();
        let ctx = OracleContext { dataset: &ds, labeled: &[], round: 0, seeding: false };
        let out = GroundTruthOracle.respond(&refs, &ctx).unwrap();
        let ids: Vec<&str> = out.iter().map(|r| r.instance_id.as_str()).collect();
        assert_eq!(ids, vec!["i0", "i1", "i2", "i3", "i4"]);
    }

    #[test]
    fn simulated_bounds() {
        let cfg = SimOracleConfig::default();
        let inst = labeled_instance("a", 0);
        let mut rng = stream_rng(1, 0, 0);
        for _ in 0..2000 {
            let hi = simulated_response(&inst, 0.95, 2, &cfg, &mut rng).unwrap();
            assert!((0.6..=1.0).contains(&hi.confidence));
            let lo = simulated_response(&inst, 0.10, 2, &cfg, &mut rng).unwrap();
            assert!((0.1..=0.5).contains(&lo.confidence));
        }
    }

    #[test]
    fn simulated_midpoint_monte_carlo() {
        let cfg = SimOracleConfig::default();
        let inst = labeled_instance("a", 1);
        let mut rng = stream_rng(2, 0, 0);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| simulated_response(&inst, cfg.initial_confidence(), 2, &cfg, &mut rng).unwrap().confidence)
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.55).abs() < 0.01, "{mean}");
        assert!(draws.iter().all(|c| (0.35..=0.75).contains(c)));
    }

    #[test]
    fn flip_rate_follows_linear_link() {
        let cfg = SimOracleConfig { error_rate_at_min_confidence: 0.3, ..Default::default() };
        assert!((cfg.flip_probability(0.3) - 0.3).abs() < 1e-12);
        assert_eq!(cfg.flip_probability(0.8), 0.0);
        assert!((cfg.flip_probability(0.55) - 0.15).abs() < 1e-12);
        let inst = labeled_instance("a", 1);
        let mut rng = stream_rng(3, 0, 0);
        let n = 20_000;
        let wrong = (0..n)
            .filter(|_| simulated_response(&inst, 0.0, 2, &cfg, &mut rng).unwrap().label != 1)
            .count();
        let rate = wrong as f64 / n as f64;
        assert!((rate - 0.3).abs() < 0.015, "{rate}");
        let none_wrong = (0..n).all(|_| simulated_response(&inst, 1.0, 2, &cfg, &mut rng).unwrap().label == 1);
        assert!(none_wrong);
    }

    #[test]
    fn noisy_flip_rates() {
        let inst = labeled_instance("a", 0);
        let dist = ConfidenceDist::default();
        let mut rng = stream_rng(4, 0, 0);
        assert!((0..500).all(|_| noisy_oracle(&inst, 2, 0.0, &dist, &mut rng).unwrap().label == 0));
        assert!((0..500).all(|_| noisy_oracle(&inst, 2, 1.0, &dist, &mut rng).unwrap().label == 1));
        let correct = (0..10_000)
            .filter(|_| noisy_oracle(&inst, 2, 0.5, &dist, &mut rng).unwrap().label == 0)
            .count();
        assert!((correct as f64 / 10_000.0 - 0.5).abs() < 0.02);
        assert!(noisy_oracle(&inst, 2, 1.5, &dist, &mut rng).is_err());
        // a wrong answer among three classes is never the truth
        assert!((0..500).all(|_| noisy_oracle(&inst, 3, 1.0, &dist, &mut rng).unwrap().label != 0));
    }

    #[test]
    fn oracles_are_deterministic_per_seed() {
        let batch: Vec<Instance> = (0..20)
            .map(|i| Instance::new(format!("i{i:02}"), vec![i as f64, (i % 3) as f64]).with_truth(i % 2))
            .collect();
        let ds = Dataset::new("d", vec!["x".into(), "y".into()], batch.clone(), 2).unwrap();
        let refs: Vec<&Instance> = batch.iter().collect();
        let labeled: Vec<LabeledExample> = (0..6)
            .map(|i| LabeledExample::new(format!("i{i:02}"), i % 2, 0.7, LabelSource::Simulated, 0).unwrap())
            .collect();
        let ctx = OracleContext { dataset: &ds, labeled: &labeled, round: 3, seeding: false };
        let specs = [
            OracleSpec::Simulated(SimOracleConfig {
                error_rate_at_min_confidence: 0.3,
                companion_learner: LearnerConfig { n_trees: 10, ..Default::default() },
                seed: 5,
                ..Default::default()
            }),
            OracleSpec::Noisy(NoisyOracleConfig { seed: 5, ..Default::default() }),
        ];
        for spec in specs {
            let a = spec.build().unwrap().respond(&refs, &ctx).unwrap();
            let b = spec.build().unwrap().respond(&refs, &ctx).unwrap();
            assert_eq!(a, b);
            let c = spec.reseeded(6).build().unwrap().respond(&refs, &ctx).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn companion_drives_confidence_after_round_zero() {
        // well separated classes: the companion is sure, so confidence sits
        // near the upper clamp
        let mut instances = vec![];
        for i in 0..30 {
            let c = i % 2;
            let x = if c == 1 { 5.0 } else { -5.0 };
            instances.push(Instance::new(format!("i{i:02}"), vec![x + (i as f64) * 0.01, 1.0]).with_truth(c));
        }
        let ds = Dataset::new("d", vec!["x".into(), "y".into()], instances.clone(), 2).unwrap();
        let labeled: Vec<LabeledExample> = (0..20)
            .map(|i| LabeledExample::new(format!("i{i:02}"), i % 2, 0.7, LabelSource::Simulated, 0).unwrap())
            .collect();
        let batch: Vec<&Instance> = instances[20..].iter().collect();
        let cfg = SimOracleConfig {
            noise_halfwidth: 0.0,
            companion_learner: LearnerConfig::of_kind(crate::learners::LearnerKind::Knn),
            ..Default::default()
        };
        let oracle = SimulatedOracle::new(cfg).unwrap();
        let later = OracleContext { dataset: &ds, labeled: &labeled, round: 2, seeding: false };
        assert!(oracle.respond(&batch, &later).unwrap().iter().all(|r| r.confidence == 0.8));
        let first = OracleContext { round: 0, ..later };
        assert!(oracle.respond(&batch, &first).unwrap().iter().all(|r| (r.confidence - 0.55).abs() < 1e-12));
    }

    #[test]
    fn sim_config_validation() {
        assert!(SimOracleConfig { clamp_lo: 0.8, clamp_hi: 0.3, ..Default::default() }.validate().is_err());
        assert!(SimOracleConfig { error_rate_at_min_confidence: 0.6, ..Default::default() }.validate().is_err());
        assert!(SimOracleConfig::default().validate().is_ok());
    }

    #[test]
    fn deferred_batch_flow() {
        let batch = deferred_oracle((0..5).map(|i| format!("e{i}")).collect(), 2);
        let waiter = {
            let b = batch.clone();
            std::thread::spawn(move || b.wait())
        };
        assert!(matches!(batch.submit("e0", 1, 11), Err(Error::InvalidArgument(_))));
        assert_eq!(batch.pending().len(), 5);
        assert!(!batch.submit("e0", 1, 8).unwrap());
        assert!(matches!(batch.submit("e0", 0, 2), Err(Error::DuplicateSubmission(_))));
        assert!(matches!(batch.submit("zz", 0, 2), Err(Error::UnknownInstance(_))));
        assert!(batch.submit("e1", 2, 5).is_err());
        for i in 1..4 {
            assert!(!batch.submit(&format!("e{i}"), 0, 5).unwrap());
        }
        assert_eq!(batch.wait_timeout(Duration::from_millis(10)).unwrap(), None);
        assert!(batch.submit("e4", 0, 10).unwrap());
        let out = waiter.join().unwrap().unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!((out[0].label, out[0].confidence), (1, 0.8));
        assert_eq!(out[4].confidence, 1.0);
        assert_eq!(batch.try_collect().unwrap(), out);
    }

    #[test]
    fn concurrent_submissions_keep_first_writer() {
        let batch = deferred_oracle(vec!["x".into()], 2);
        let handles: Vec<_> = (0..8)
            .map(|t| {
                let b = batch.clone();
                std::thread::spawn(move || b.submit("x", t % 2, t as i64).is_ok())
            })
            .collect();
        let winners = handles.into_iter().map(|h| h.join().unwrap()).filter(|&ok| ok).count();
        assert_eq!(winners, 1);
        assert_eq!(batch.try_collect().unwrap().len(), 1);
    }

    #[test]
    fn closing_releases_waiters() {
        let batch = deferred_oracle(vec!["x".into(), "y".into()], 2);
        let waiter = {
            let b = batch.clone();
            std::thread::spawn(move || b.wait())
        };
        batch.submit("x", 0, 3).unwrap();
        batch.close();
        assert!(matches!(waiter.join().unwrap(), Err(Error::SessionClosed)));
        assert!(matches!(batch.submit("y", 0, 3), Err(Error::SessionClosed)));
    }
}
