//! Live labeling sessions backed by an append-only JSON-lines event log.
//!
//! Only inputs are authoritative in the log: the creation request, label
//! submissions and manual stops. Everything else (issued batches, completed
//! rounds, rule-triggered stops) is recomputed on replay and checked against
//! what was recorded, so a recovered session is provably the one that was
//! running.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{split_indices, Dataset, LabelSource, SplitSpec, Standardizer};
use crate::engine::{seed_initial_labels, ActiveLearner, RoundRecord, SeedPolicy, StopDecision, StopKind, StoppingRule};
use crate::error::{Error, Result};
use crate::learners::{Classifier, LearnerConfig};
use crate::oracles::{deferred_oracle, OracleSpec};
use crate::sampling::{BatchSelection, SamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub sampler: SamplerConfig,
    pub learner: LearnerConfig,
    pub n_seed: usize,
    pub seed_policy: SeedPolicy,
    /// Labels the seed set; needs ground truth unless `n_seed` is 0.
    pub seed_oracle: OracleSpec,
    /// Fraction held out (with ground truth) for per-round test metrics.
    pub holdout_fraction: Option<f64>,
    pub stop: Vec<StoppingRule>,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            learner: LearnerConfig::default(),
            n_seed: 10,
            seed_policy: SeedPolicy::Stratified,
            seed_oracle: OracleSpec::GroundTruth,
            holdout_fraction: None,
            stop: Vec::new(),
            seed: 0,
            standardize: true,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.learner.validate()?;
        if let Some(h) = self.holdout_fraction {
            if !(h > 0.0 && h < 1.0) {
                return Err(Error::invalid(format!("holdout_fraction {h} outside (0, 1)")));
            }
        }
        for rule in &self.stop {
            rule.validate()?;
        }
        self.seed_oracle.build()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingLabels,
    Retraining,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxLabels,
    MinMeanConfidence,
    Manual,
    PoolExhausted,
}

impl From<StopKind> for StopReason {
    fn from(k: StopKind) -> Self {
        match k {
            StopKind::MaxLabels => StopReason::MaxLabels,
            StopKind::MinMeanConfidence => StopReason::MinMeanConfidence,
            StopKind::Manual => StopReason::Manual,
        }
    }
}

/// One instance to label, as shown to people: display fields and the
/// model's current guess, never the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub instance_id: String,
    pub display: BTreeMap<String, String>,
    pub predicted_class: usize,
    pub predicted_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchView {
    pub session_id: String,
    pub round: usize,
    pub items: Vec<BatchItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelItem {
    pub instance_id: String,
    pub label: usize,
    /// Integer rating 0–10.
    pub confidence: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    #[serde(default)]
    pub request_token: Option<String>,
    /// When given, must match the pending round.
    #[serde(default)]
    pub round: Option<usize>,
    pub items: Vec<LabelItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub session_id: String,
    pub record: RoundRecord,
    pub next_batch: Option<BatchView>,
    pub stopped: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryView {
    pub session_id: String,
    pub status: SessionStatus,
    pub records: Vec<RoundRecord>,
    pub stop_reason: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Created {
        session_id: String,
        dataset: String,
        dataset_fingerprint: String,
        config: Box<SessionConfig>,
    },
    BatchIssued {
        round: usize,
        ids: Vec<String>,
    },
    LabelSubmitted {
        round: usize,
        request_token: Option<String>,
        items: Vec<LabelItem>,
    },
    RoundCompleted {
        round: usize,
        n_labeled: usize,
        state_hash: String,
    },
    Stopped {
        reason: StopReason,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Digest of a dataset's ids, features and labels.
pub fn dataset_fingerprint(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(dataset.name().as_bytes());
    for inst in dataset.instances() {
        h.update(inst.id.as_bytes());
        h.update([0]);
        for v in &inst.features {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update(match inst.ground_truth {
            Some(c) => (c as u64 + 1).to_le_bytes(),
            None => 0u64.to_le_bytes(),
        });
    }
    hex::encode(h.finalize())
}

#[derive(Debug)]
struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    fn append(&mut self, event: &SessionEvent) -> Result<()> {
        let mut line = serde_json::to_string(event)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

#[derive(Debug, Clone)]
struct PendingBatch {
    round: usize,
    selection: BatchSelection,
    items: Vec<BatchItem>,
}

/// What recovery found in the log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryReport {
    pub events: usize,
    /// Set when an incomplete final line was dropped.
    pub truncated_line: Option<usize>,
}

impl RecoveryReport {
    pub fn warning(&self) -> Option<String> {
        self.truncated_line.map(|line| {
            format!(
                "event log ended with an incomplete line {line}; recovered through event {}",
                self.events
            )
        })
    }
}

#[derive(Debug)]
pub struct Session {
    id: String,
    dataset_name: String,
    fingerprint: String,
    config: SessionConfig,
    learner: ActiveLearner,
    status: SessionStatus,
    pending: Option<PendingBatch>,
    stop_reason: Option<StopReason>,
    tokens: BTreeMap<String, SubmitOutcome>,
    next_seq: u64,
    log: Option<EventLog>,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    id: &'a str,
    fingerprint: &'a str,
    status: SessionStatus,
    round: usize,
    labeled: &'a [crate::data::LabeledExample],
    unlabeled: &'a [String],
    pending: Option<(usize, &'a [BatchItem])>,
    history: &'a [RoundRecord],
    stop_reason: Option<StopReason>,
    tokens: Vec<&'a String>,
}

impl Session {
    /// Starts a session on `dataset`, logging to `log_path` when given.
    pub fn create(
        id: impl Into<String>,
        dataset_name: impl Into<String>,
        dataset: &Dataset,
        config: SessionConfig,
        log_path: Option<&Path>,
    ) -> Result<Self> {
        let log = match log_path {
            Some(p) => {
                if p.exists() {
                    return Err(Error::Session(format!("event log {} already exists", p.display())));
                }
                Some(open_log(p)?)
            }
            None => None,
        };
        let mut session = Self::build(id.into(), dataset_name.into(), dataset, config)?;
        session.log = log;
        session.emit(EventBody::Created {
            session_id: session.id.clone(),
            dataset: session.dataset_name.clone(),
            dataset_fingerprint: session.fingerprint.clone(),
            config: Box::new(session.config.clone()),
        })?;
        let events = session.advance()?;
        for e in events {
            session.emit(e)?;
        }
        Ok(session)
    }

    fn build(id: String, dataset_name: String, dataset: &Dataset, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let fingerprint = dataset_fingerprint(dataset);
        let (train, test) = match config.holdout_fraction {
            Some(h) => {
                let spec = SplitSpec {
                    train_fraction: 1.0 - h,
                    n_splits: 1,
                    seed: config.seed,
                };
                let (tr, te) = split_indices(dataset.len(), &spec, 0)?;
                (
                    dataset.subset(dataset.name().to_string(), &tr)?,
                    Some(dataset.subset(format!("{}-holdout", dataset.name()), &te)?),
                )
            }
            None => (dataset.clone(), None),
        };
        let (train, test) = if config.standardize {
            let rec = Standardizer::fit(&train)?;
            let test = test.map(|t| rec.apply(&t)).transpose()?;
            (rec.apply(&train)?, test)
        } else {
            (train, test)
        };
        let oracle = config.seed_oracle.build()?;
        let pool = seed_initial_labels(&train, config.n_seed, config.seed_policy, oracle.as_ref(), config.seed)?;
        let sampler = SamplerConfig {
            seed: config.seed,
            ..config.sampler.clone()
        };
        let learner = ActiveLearner::new(train, test, sampler, config.learner.clone(), pool)?;
        Ok(Self {
            id,
            dataset_name,
            fingerprint,
            config,
            learner,
            status: SessionStatus::Retraining,
            pending: None,
            stop_reason: None,
            tokens: BTreeMap::new(),
            next_seq: 1,
            log: None,
        })
    }

    /// Evaluates stopping and either issues the next batch or stops.
    /// Returns the derived events.
    fn advance(&mut self) -> Result<Vec<EventBody>> {
        let reason = match self.learner.evaluate_stopping(&self.config.stop) {
            StopDecision::Stop { reason } => Some(StopReason::from(reason)),
            StopDecision::Continue if self.learner.pool().unlabeled.len() < self.config.sampler.batch_size => {
                Some(StopReason::PoolExhausted)
            }
            StopDecision::Continue => None,
        };
        if let Some(reason) = reason {
            self.status = SessionStatus::Stopped;
            self.stop_reason = Some(reason);
            self.pending = None;
            return Ok(vec![EventBody::Stopped { reason }]);
        }
        let selection = self.learner.propose()?;
        let model = self.learner.model();
        let items = selection
            .ids
            .iter()
            .map(|id| {
                let inst = self.learner.train().instance(id)?;
                let p = model.predict_proba(&inst.features)?;
                Ok(BatchItem {
                    instance_id: id.clone(),
                    display: inst.display.clone(),
                    predicted_class: p.predicted,
                    predicted_probability: p.max_prob(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let round = self.learner.round();
        let ids = selection.ids.clone();
        self.pending = Some(PendingBatch { round, selection, items });
        self.status = SessionStatus::AwaitingLabels;
        Ok(vec![EventBody::BatchIssued { round, ids }])
    }

    fn emit(&mut self, body: EventBody) -> Result<()> {
        let event = SessionEvent {
            seq: self.next_seq,
            timestamp_ms: now_ms(),
            body,
        };
        if let Some(log) = &mut self.log {
            log.append(&event)?;
        }
        self.next_seq += 1;
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dataset_name(&self) -> &str {
        &self.dataset_name
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop_reason
    }

    pub fn round(&self) -> usize {
        self.learner.round()
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(|l| l.path.as_path())
    }

    pub fn pending_batch(&self) -> Option<BatchView> {
        self.pending.as_ref().map(|p| BatchView {
            session_id: self.id.clone(),
            round: p.round,
            items: p.items.clone(),
        })
    }

    pub fn history(&self) -> HistoryView {
        HistoryView {
            session_id: self.id.clone(),
            status: self.status,
            records: self.learner.history().to_vec(),
            stop_reason: self.stop_reason,
        }
    }

    /// Digest of everything that defines the session's state, excluding
    /// timestamps.
    pub fn state_hash(&self) -> String {
        let pool = self.learner.pool();
        let snap = Snapshot {
            id: &self.id,
            fingerprint: &self.fingerprint,
            status: self.status,
            round: self.learner.round(),
            labeled: &pool.labeled,
            unlabeled: &pool.unlabeled,
            pending: self.pending.as_ref().map(|p| (p.round, p.items.as_slice())),
            history: self.learner.history(),
            stop_reason: self.stop_reason,
            tokens: self.tokens.keys().collect(),
        };
        let json = serde_json::to_vec(&snap).expect("snapshot serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Applies a full set of answers for the pending batch.
    pub fn submit_labels(&mut self, request: SubmitRequest) -> Result<SubmitOutcome> {
        if let Some(token) = &request.request_token {
            if let Some(previous) = self.tokens.get(token) {
                return Ok(previous.clone());
            }
        }
        let (outcome, events) = self.apply_submission(&request)?;
        self.emit(EventBody::LabelSubmitted {
            round: outcome.record.round,
            request_token: request.request_token.clone(),
            items: request.items.clone(),
        })?;
        for e in events {
            self.emit(e)?;
        }
        Ok(outcome)
    }

    fn apply_submission(&mut self, request: &SubmitRequest) -> Result<(SubmitOutcome, Vec<EventBody>)> {
        if self.status == SessionStatus::Stopped {
            return Err(Error::SessionClosed);
        }
        let pending = self
            .pending
            .as_ref()
            .ok_or_else(|| Error::Session("no batch is pending".into()))?;
        if let Some(r) = request.round {
            if r != pending.round {
                return Err(Error::Session(format!(
                    "submission for round {r} but round {} is pending",
                    pending.round
                )));
            }
        }
        let deferred = deferred_oracle(pending.selection.ids.clone(), self.learner.train().n_classes());
        for item in &request.items {
            deferred.submit(&item.instance_id, item.label, item.confidence)?;
        }
        let missing = deferred.pending();
        if !missing.is_empty() {
            return Err(Error::Insufficient(format!("missing labels for {}", missing.join(", "))));
        }
        let responses = deferred.try_collect().expect("batch complete");
        let selection = pending.selection.clone();

        self.status = SessionStatus::Retraining;
        let completed = self.learner.complete(&selection, responses, LabelSource::Human);
        let mut record = match completed {
            Ok(r) => r.clone(),
            Err(e) => {
                self.status = SessionStatus::AwaitingLabels;
                return Err(e);
            }
        };
        record.metrics.correct_labels = None;
        if let Some(last) = self.last_record_mut() {
            last.metrics.correct_labels = None;
        }
        let round = record.round;
        let n_labeled = record.n_labeled;

        let mut events = self.advance()?;
        let outcome = SubmitOutcome {
            session_id: self.id.clone(),
            record,
            next_batch: self.pending_batch(),
            stopped: self.stop_reason,
        };
        if let Some(token) = &request.request_token {
            self.tokens.insert(token.clone(), outcome.clone());
        }
        events.insert(
            0,
            EventBody::RoundCompleted {
                round,
                n_labeled,
                state_hash: self.state_hash(),
            },
        );
        Ok((outcome, events))
    }

    fn last_record_mut(&mut self) -> Option<&mut RoundRecord> {
        self.learner.last_record_mut()
    }

    /// Stops the session; later submissions are rejected.
    pub fn stop(&mut self) -> Result<StopReason> {
        if let Some(reason) = self.stop_reason {
            return Ok(reason);
        }
        self.apply_stop();
        self.emit(EventBody::Stopped { reason: StopReason::Manual })?;
        Ok(StopReason::Manual)
    }

    fn apply_stop(&mut self) {
        self.learner.stop_manually();
        self.status = SessionStatus::Stopped;
        self.stop_reason = Some(StopReason::Manual);
        self.pending = None;
    }

    /// Rebuilds a session from its event log. `resolve` maps the logged
    /// dataset name to the dataset. An incomplete final line is cut from the
    /// file and reported; any other damage is an error.
    pub fn recover<F>(log_path: &Path, resolve: F) -> Result<(Self, RecoveryReport)>
    where
        F: FnOnce(&str) -> Result<Dataset>,
    {
        let (events, good_bytes, truncated_line) = read_events(log_path)?;
        if events.is_empty() {
            return Err(Error::CorruptLog {
                line: 1,
                message: "event log is empty".into(),
            });
        }
        let report = RecoveryReport {
            events: events.len(),
            truncated_line,
        };
        let mut iter = events.into_iter().enumerate();
        let (_, first) = iter.next().expect("non-empty");
        let EventBody::Created {
            session_id,
            dataset,
            dataset_fingerprint: fp,
            config,
        } = first.body
        else {
            return Err(Error::CorruptLog {
                line: 1,
                message: "first event is not 'created'".into(),
            });
        };
        let data = resolve(&dataset)?;
        if dataset_fingerprint(&data) != fp {
            return Err(Error::Session(format!(
                "dataset '{dataset}' differs from the one this session was created on"
            )));
        }
        let mut session = Self::build(session_id, dataset, &data, *config)?;
        let mut expected: std::collections::VecDeque<EventBody> = session.advance()?.into();
        let mut last_seq = first.seq;

        for (idx, event) in iter {
            let line = idx + 1;
            let diverged = |message: String| Error::CorruptLog { line, message };
            if event.seq <= last_seq {
                return Err(diverged(format!("sequence number {} not increasing", event.seq)));
            }
            last_seq = event.seq;
            match event.body {
                EventBody::LabelSubmitted { request_token, items, round } => {
                    if !expected.is_empty() {
                        return Err(diverged("submission before the derived events it follows".into()));
                    }
                    let request = SubmitRequest {
                        request_token,
                        round: Some(round),
                        items,
                    };
                    let (_, derived) = session
                        .apply_submission(&request)
                        .map_err(|e| diverged(format!("replayed submission failed: {e}")))?;
                    expected = derived.into();
                }
                EventBody::Stopped {
                    reason: StopReason::Manual,
                } if expected.is_empty() => {
                    session.apply_stop();
                }
                body => {
                    let want = expected
                        .pop_front()
                        .ok_or_else(|| diverged(format!("unexpected event {body:?}")))?;
                    if want != body {
                        return Err(diverged(format!("replay diverged: logged {body:?}, recomputed {want:?}")));
                    }
                }
            }
        }
        session.next_seq = last_seq + 1;

        let file = OpenOptions::new()
            .write(true)
            .open(log_path)
            .map_err(|e| Error::io(log_path, e))?;
        if truncated_line.is_some() {
            file.set_len(good_bytes).map_err(|e| Error::io(log_path, e))?;
        }
        drop(file);
        session.log = Some(open_log(log_path)?);
        // derived events that never reached the log before the crash
        for body in expected {
            session.emit(body)?;
        }
        Ok((session, report))
    }
}

fn open_log(path: &Path) -> Result<EventLog> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(EventLog {
        path: path.to_path_buf(),
        file,
    })
}

/// Parsed events, the byte length of the valid prefix, and the line number
/// of a dropped incomplete last line.
fn read_events(path: &Path) -> Result<(Vec<SessionEvent>, u64, Option<usize>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut good = 0u64;
    let mut line_no = 0usize;
    let mut buf = String::new();
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Ok((events, good, None));
        }
        line_no += 1;
        let complete = buf.ends_with('\n');
        let text = buf.trim_end();
        if text.is_empty() && complete {
            good += n as u64;
            continue;
        }
        match serde_json::from_str::<SessionEvent>(text) {
            Ok(event) if complete => {
                events.push(event);
                good += n as u64;
            }
            Ok(_) | Err(_) => {
                let mut rest = String::new();
                let more = reader.read_line(&mut rest).map_err(|e| Error::io(path, e))?;
                if more == 0 {
                    return Ok((events, good, Some(line_no)));
                }
                return Err(Error::CorruptLog {
                    line: line_no,
                    message: "unparseable event".into(),
                });
            }
        }
    }
}

/// Reads a log without replaying it.
pub fn read_event_log(path: &Path) -> Result<Vec<SessionEvent>> {
    Ok(read_events(path)?.0)
}
