//! Multi-split, multi-arm simulation runs with paired splits and seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{evaluate_stopping, seed_initial_labels, ActiveLearner, RoundMetrics, RoundRecord, SeedPolicy, StopDecision, StoppingRule};
use crate::data::{generate_synthetic_anomaly_dataset, load_csv, split, CsvSchema, Dataset, SplitSpec, Standardizer};
use crate::error::{Error, Result};
use crate::learners::LearnerConfig;
use crate::oracles::OracleSpec;
use crate::rng::{derive_seed, TAG_LEARNER, TAG_RUN};
use crate::sampling::{PoolState, SamplerConfig, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub sampler: SamplerConfig,
}

impl Arm {
    pub fn of(strategy: Strategy) -> Self {
        Self {
            name: strategy.as_str().to_string(),
            sampler: SamplerConfig {
                strategy,
                ..SamplerConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub arms: Vec<Arm>,
    pub learner: LearnerConfig,
    pub oracle: OracleSpec,
    pub split: SplitSpec,
    /// Query budget per run, clamped to the pool size.
    pub budget: usize,
    /// Overrides every arm's batch size.
    pub batch_size: usize,
    pub n_seed: usize,
    pub seed_policy: SeedPolicy,
    pub stop: Vec<StoppingRule>,
    pub seed: u64,
    /// Z-score features with statistics from each training split.
    pub standardize: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            arms: vec![Arm::of(Strategy::Rbm), Arm::of(Strategy::Edig)],
            learner: LearnerConfig::default(),
            oracle: OracleSpec::default(),
            split: SplitSpec::default(),
            budget: 200,
            batch_size: 5,
            n_seed: 10,
            seed_policy: SeedPolicy::Stratified,
            stop: Vec::new(),
            seed: 0,
            standardize: true,
        }
    }
}

impl ExperimentConfig {
    fn arm_sampler(&self, arm: &Arm, split_seed: u64) -> SamplerConfig {
        SamplerConfig {
            batch_size: self.batch_size,
            seed: split_seed,
            ..arm.sampler.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::invalid("at least one arm is required"));
        }
        let names: BTreeSet<&str> = self.arms.iter().map(|a| a.name.as_str()).collect();
        if names.len() != self.arms.len() {
            return Err(Error::invalid("arm names must be unique"));
        }
        if self.arms.iter().any(|a| a.name.is_empty() || a.name.contains([',', '\n', '"'])) {
            return Err(Error::invalid("arm names must be non-empty and free of commas, quotes and newlines"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.budget < self.batch_size {
            return Err(Error::invalid(format!(
                "budget {} is smaller than batch_size {}",
                self.budget, self.batch_size
            )));
        }
        for arm in &self.arms {
            self.arm_sampler(arm, 0)
                .validate()
                .map_err(|e| Error::invalid(format!("arm '{}': {e}", arm.name)))?;
        }
        for rule in &self.stop {
            rule.validate()?;
        }
        self.learner.validate()?;
        self.split.validate()?;
        self.oracle.build()?;
        Ok(())
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub arm: String,
    pub split: usize,
    pub round: usize,
    pub n_labeled: usize,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub auprc: Option<f64>,
    pub mean_confidence: Option<f64>,
    pub correct_labels: Option<usize>,
    pub alpha: f64,
    pub mean_weighted_uncertainty: f64,
}

impl ResultRow {
    fn from_record(arm: &str, split: usize, r: &RoundRecord) -> Self {
        Self {
            arm: arm.to_string(),
            split,
            round: r.round,
            n_labeled: r.n_labeled,
            f1: r.metrics.f1,
            precision: r.metrics.precision,
            recall: r.metrics.recall,
            auprc: r.metrics.auprc,
            mean_confidence: r.metrics.mean_confidence,
            correct_labels: r.metrics.correct_labels,
            alpha: r.alpha,
            mean_weighted_uncertainty: r.mean_weighted_uncertainty,
        }
    }
}

/// The full history of one (arm, split) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub arm: String,
    pub split: usize,
    /// Metrics of the model fitted on the seed labels only.
    pub initial: RoundMetrics,
    pub records: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    /// Ordered by arm (config order), split, round.
    pub rows: Vec<ResultRow>,
    pub cells: Vec<CellRun>,
    pub split_seeds: Vec<u64>,
}

impl ExperimentResult {
    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &self.rows).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn csv_sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }
}

pub const RESULTS_HEADER: &str =
    "arm,split,round,n_labeled,f1,precision,recall,auprc,mean_confidence,correct_labels,alpha,mean_weighted_uncertainty";

fn fixed(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_results_csv<W: Write>(mut out: W, rows: &[ResultRow]) -> std::io::Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{:.6},{:.6}",
            r.arm,
            r.split,
            r.round,
            r.n_labeled,
            fixed(r.f1),
            fixed(r.precision),
            fixed(r.recall),
            fixed(r.auprc),
            fixed(r.mean_confidence),
            r.correct_labels.map(|c| c.to_string()).unwrap_or_default(),
            r.alpha,
            r.mean_weighted_uncertainty
        )?;
    }
    Ok(())
}

struct PreparedSplit {
    train: Dataset,
    test: Dataset,
    pool: PoolState,
    seed: u64,
    rounds: usize,
}

fn prepare_split(dataset: &Dataset, config: &ExperimentConfig, index: usize) -> Result<PreparedSplit> {
    let seed = derive_seed(config.seed, TAG_RUN, index as u64);
    let (train, test) = split(dataset, &config.split, index)?;
    let (train, test) = if config.standardize {
        let record = Standardizer::fit(&train)?;
        (record.apply(&train)?, record.apply(&test)?)
    } else {
        (train, test)
    };
    let oracle = config.oracle.reseeded(seed).build()?;
    let pool = seed_initial_labels(&train, config.n_seed, config.seed_policy, oracle.as_ref(), seed)?;
    let budget = config.budget.min(pool.unlabeled.len());
    Ok(PreparedSplit {
        rounds: budget / config.batch_size,
        train,
        test,
        pool,
        seed,
    })
}

fn run_cell(config: &ExperimentConfig, arm: &Arm, split_index: usize, prep: &PreparedSplit) -> Result<CellRun> {
    let learner = LearnerConfig {
        seed: derive_seed(prep.seed, TAG_LEARNER, config.learner.seed),
        ..config.learner.clone()
    };
    let oracle = config.oracle.reseeded(prep.seed).build()?;
    let mut al = ActiveLearner::new(
        prep.train.clone(),
        Some(prep.test.clone()),
        config.arm_sampler(arm, prep.seed),
        learner,
        prep.pool.clone(),
    )?;
    let initial = al.evaluate()?;
    for _ in 0..prep.rounds {
        if let StopDecision::Stop { .. } =
            evaluate_stopping(al.pool().labeled.len(), al.history(), false, &config.stop)
        {
            break;
        }
        al.run_round(oracle.as_ref())?;
    }
    Ok(CellRun {
        arm: arm.name.clone(),
        split: split_index,
        initial,
        records: al.history().to_vec(),
    })
}

/// Runs every arm on every split. Arms on the same split share the train
/// and test halves, the seed labels and all random seeds, so differences
/// between arms come from the query strategy alone. Results do not depend
/// on thread scheduling.
pub fn run_experiment(dataset: &Dataset, config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let splits = (0..config.split.n_splits)
        .into_par_iter()
        .map(|s| prepare_split(dataset, config, s))
        .collect::<Result<Vec<_>>>()?;

    let cells: Vec<(usize, usize)> = (0..config.arms.len())
        .flat_map(|a| (0..splits.len()).map(move |s| (a, s)))
        .collect();
    let runs = cells
        .par_iter()
        .map(|&(a, s)| run_cell(config, &config.arms[a], s, &splits[s]))
        .collect::<Result<Vec<_>>>()?;

    let rows = runs
        .iter()
        .flat_map(|cell| {
            cell.records
                .iter()
                .map(|r| ResultRow::from_record(&cell.arm, cell.split, r))
        })
        .collect();
    Ok(ExperimentResult {
        rows,
        cells: runs,
        split_seeds: splits.iter().map(|p| p.seed).collect(),
    })
}

/// Where an experiment's data comes from, so a run can be repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic { n: usize, anomaly_rate: f64, seed: u64 },
    Csv { path: PathBuf, schema: CsvSchema },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic { n, anomaly_rate, seed } => {
                generate_synthetic_anomaly_dataset(*n, *anomaly_rate, *seed)
            }
            DatasetSource::Csv { path, schema } => Ok(load_csv(path, schema)?.0),
        }
    }
}

/// Everything needed to repeat a run, plus a digest of what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub dataset: DatasetSource,
    pub config: ExperimentConfig,
    pub split_seeds: Vec<u64>,
    pub n_rows: usize,
    pub results_sha256: String,
    /// Files written by the run, by role.
    #[serde(default)]
    pub artifacts: BTreeMap<String, PathBuf>,
}

impl RunManifest {
    pub fn new(dataset: DatasetSource, config: ExperimentConfig, result: &ExperimentResult) -> Self {
        Self {
            tool: "alkit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            dataset,
            config,
            split_seeds: result.split_seeds.clone(),
            n_rows: result.rows.len(),
            results_sha256: result.csv_sha256(),
            artifacts: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::LearnerKind;
    use crate::oracles::SimOracleConfig;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            learner: LearnerConfig { n_trees: 10, ..LearnerConfig::default() },
            oracle: OracleSpec::Simulated(SimOracleConfig {
                error_rate_at_min_confidence: 0.3,
                companion_learner: LearnerConfig::of_kind(LearnerKind::GaussianNb),
                ..Default::default()
            }),
            split: SplitSpec { n_splits: 3, ..SplitSpec::default() },
            budget: 25,
            ..ExperimentConfig::default()
        }
    }

    fn data() -> Dataset {
        generate_synthetic_anomaly_dataset(120, 0.6, 2).unwrap()
    }

    #[test]
    fn row_cardinality() {
        let result = run_experiment(&data(), &small_config()).unwrap();
        assert_eq!(result.rows.len(), 2 * 3 * 5);
        let single = ExperimentConfig {
            arms: vec![Arm::of(Strategy::Edig)],
            split: SplitSpec { n_splits: 1, ..SplitSpec::default() },
            ..small_config()
        };
        let result = run_experiment(&data(), &single).unwrap();
        let rounds: Vec<usize> = result.rows.iter().map(|r| r.round).collect();
        assert_eq!(rounds, vec![0, 1, 2, 3, 4]);
        assert!(result.rows.windows(2).all(|w| w[1].n_labeled == w[0].n_labeled + 5));
    }

    #[test]
    fn arms_share_split_and_seed_labels() {
        let config = small_config();
        let result = run_experiment(&data(), &config).unwrap();
        for s in 0..3 {
            let runs: Vec<&CellRun> = result.cells.iter().filter(|c| c.split == s).collect();
            assert_eq!(runs.len(), 2);
            assert_eq!(runs[0].initial, runs[1].initial);
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let a = run_experiment(&data(), &small_config()).unwrap();
        let b = run_experiment(&data(), &small_config()).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.csv_sha256(), b.csv_sha256());
        let other = ExperimentConfig { seed: 1, ..small_config() };
        assert_ne!(run_experiment(&data(), &other).unwrap().to_csv(), a.to_csv());
    }

    #[test]
    fn budget_is_clamped_to_pool() {
        let config = ExperimentConfig {
            budget: 10_000,
            split: SplitSpec { n_splits: 1, ..SplitSpec::default() },
            arms: vec![Arm::of(Strategy::Random)],
            ..small_config()
        };
        let result = run_experiment(&data(), &config).unwrap();
        // 60 train, 10 seeded, 50 left in batches of 5
        assert_eq!(result.rows.len(), 10);
        assert_eq!(result.rows.last().unwrap().n_labeled, 60);
    }

    #[test]
    fn stopping_rules_cut_runs_short() {
        let config = ExperimentConfig {
            stop: vec![StoppingRule::max_labels(20)],
            ..small_config()
        };
        let result = run_experiment(&data(), &config).unwrap();
        assert!(result.rows.iter().all(|r| r.n_labeled <= 20));
        assert_eq!(result.rows.len(), 2 * 3 * 2);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = small_config();
        c.arms.clear();
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.arms.push(Arm::of(Strategy::Rbm));
        assert!(c.validate().is_err());
        let c = ExperimentConfig { budget: 3, ..small_config() };
        assert!(c.validate().is_err());
        let c = ExperimentConfig { arms: vec![Arm::of(Strategy::TopPositiveMix)], ..small_config() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn csv_layout() {
        let result = run_experiment(
            &data(),
            &ExperimentConfig {
                arms: vec![Arm::of(Strategy::Rbm)],
                split: SplitSpec { n_splits: 1, ..SplitSpec::default() },
                ..small_config()
            },
        )
        .unwrap();
        let csv = result.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), RESULTS_HEADER);
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 12);
        assert_eq!(&first[..4], &["rbm", "0", "0", "15"]);
        assert!(first[4].split('.').nth(1).unwrap().len() == 6);
    }

    #[test]
    fn manifest_roundtrip() {
        let config = small_config();
        let source = DatasetSource::Synthetic { n: 120, anomaly_rate: 0.6, seed: 2 };
        let result = run_experiment(&source.load().unwrap(), &config).unwrap();
        let manifest = RunManifest::new(source, config, &result);
        let back = RunManifest::from_json(&manifest.to_json().unwrap()).unwrap();
        assert_eq!(back, manifest);
        let rerun = run_experiment(&back.dataset.load().unwrap(), &back.config).unwrap();
        assert_eq!(rerun.csv_sha256(), manifest.results_sha256);
    }
}
