use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use alkit_core::data::{
    generate_synthetic_anomaly_dataset, load_csv, transform_confidence_label, write_dataset_csv, CsvSchema, Dataset,
    SplitSpec,
};
use alkit_core::engine::{run_experiment, Arm, DatasetSource, ExperimentConfig, RunManifest};
use alkit_core::learners::{LearnerConfig, LearnerKind};
use alkit_core::oracles::{ConfidenceDist, NoisyOracleConfig, OracleSpec, SimOracleConfig};
use alkit_core::report::{build_report, comparison_table, read_results_csv, Metric, ReportConfig};
use alkit_core::sampling::{Mix, SamplerConfig, Strategy, UncertaintyMeasure};
use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "alkit", version, about = "Confidence-aware batch active learning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic anomaly dataset and its schema.
    Generate(GenerateArgs),
    /// Run paired sampler arms over repeated splits.
    Simulate(SimulateArgs),
    /// Summarize results and test arms against a baseline.
    Report(ReportArgs),
    /// Host live labeling sessions over HTTP.
    Serve(ServeArgs),
    /// Append the confidence-weighted label column to a label file.
    Transform(TransformArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.6)]
    pub anomaly_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out stem>.schema.json` beside the CSV.
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    Simulated,
    GroundTruth,
    Noisy,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").args(["dataset", "synthetic", "manifest"]).required(true)))]
pub struct SimulateArgs {
    /// Dataset CSV; its schema comes from --schema or `<stem>.schema.json`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    pub schema: Option<PathBuf>,
    /// Generate a synthetic dataset of this many rows instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 0.6, requires = "synthetic")]
    pub anomaly_rate: f64,
    /// Seed for the synthetic dataset; defaults to --seed.
    #[arg(long, requires = "synthetic")]
    pub data_seed: Option<u64>,
    /// Repeat the run recorded in a manifest; other run flags are ignored.
    #[arg(long, conflicts_with_all = ["dataset", "synthetic"])]
    pub manifest: Option<PathBuf>,

    #[arg(long, value_delimiter = ',', default_value = "rbm,edig")]
    pub arms: Vec<Strategy>,
    #[arg(long, default_value_t = 20)]
    pub splits: usize,
    #[arg(long, default_value_t = 5)]
    pub batch: usize,
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 10)]
    pub n_seed: usize,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    /// top_positive_mix parts as TOP,UNCERTAIN,RANDOM; defaults to 14:3:3
    /// scaled to the batch size.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub mix: Option<Vec<usize>>,
    #[arg(long, default_value = "least-confident", value_parser = parse_measure)]
    pub uncertainty: UncertaintyMeasure,
    #[arg(long, default_value = "rf")]
    pub learner: LearnerKind,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, value_enum, default_value_t = OracleKind::Simulated)]
    pub oracle: OracleKind,
    /// Simulated oracle: flip probability at the lowest confidence.
    #[arg(long, default_value_t = 0.0)]
    pub error_rate: f64,
    /// Noisy oracle: flip probability, independent of confidence.
    #[arg(long, default_value_t = 0.1)]
    pub flip_prob: f64,
    #[arg(long, default_value = "results.csv")]
    pub out: PathBuf,
    /// Defaults to `<out stem>.manifest.json`.
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
}

fn parse_measure(s: &str) -> Result<UncertaintyMeasure, String> {
    s.replace('-', "_").parse().map_err(|e: alkit_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// One or more results CSVs.
    #[arg(required = true)]
    pub results: Vec<PathBuf>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "f1")]
    pub metric: Metric,
    #[arg(long, default_value = "rbm")]
    pub baseline: String,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    pub checkpoints: Vec<f64>,
    #[arg(long, default_value_t = 0.3)]
    pub flag_from: f64,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("data").args(["dataset", "synthetic"]).required(true).multiple(true)))]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "ALKIT_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "ALKIT_DATA_DIR", default_value = "alkit-data")]
    pub data_dir: PathBuf,
    /// Dataset CSV, served under its file stem.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    pub schema: Option<PathBuf>,
    /// Also serve a synthetic dataset of this many rows as `synthetic`.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    pub input: PathBuf,
    /// Defaults to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label_col: String,
    #[arg(long, default_value = "confidence")]
    pub confidence_col: String,
    #[arg(long, default_value = "confidence_label")]
    pub out_col: String,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
        Command::Transform(a) => transform(a),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn generate(a: GenerateArgs) -> Result<()> {
    let ds = generate_synthetic_anomaly_dataset(a.n, a.anomaly_rate, a.seed)?;
    let mut out = create(&a.out)?;
    let schema = write_dataset_csv(&ds, &mut out)?;
    out.flush()?;
    let schema_path = a.schema_out.unwrap_or_else(|| sibling(&a.out, "schema.json"));
    fs::write(&schema_path, serde_json::to_string_pretty(&schema)? + "\n")
        .with_context(|| format!("writing {}", schema_path.display()))?;
    eprintln!(
        "wrote {} rows to {} (schema {})",
        ds.len(),
        a.out.display(),
        schema_path.display()
    );
    Ok(())
}

fn load_schema(dataset: &Path, schema: Option<&Path>) -> Result<CsvSchema> {
    let path = schema.map(Path::to_path_buf).unwrap_or_else(|| sibling(dataset, "schema.json"));
    if !path.exists() {
        bail!(
            "no schema for {}: pass --schema or create {}",
            dataset.display(),
            path.display()
        );
    }
    Ok(CsvSchema::from_json_file(&path)?)
}

fn simulation_config(a: &SimulateArgs) -> Result<ExperimentConfig> {
    let mix = match a.mix.as_deref() {
        Some(&[t, u, r]) => Mix {
            n_top_positive: t,
            n_uncertain: u,
            n_random: r,
        },
        Some(_) => bail!("--mix takes three counts"),
        None => Mix::scaled_to(a.batch),
    };
    let mut arms = Vec::new();
    for &strategy in &a.arms {
        if arms.iter().any(|x: &Arm| x.name == strategy.as_str()) {
            bail!("arm `{strategy}` given twice");
        }
        arms.push(Arm {
            name: strategy.as_str().to_string(),
            sampler: SamplerConfig {
                strategy,
                beta: a.beta,
                uncertainty_measure: a.uncertainty,
                mix,
                ..SamplerConfig::default()
            },
        });
    }
    let learner = LearnerConfig {
        n_trees: a.trees,
        ..LearnerConfig::of_kind(a.learner)
    };
    let oracle = match a.oracle {
        OracleKind::GroundTruth => OracleSpec::GroundTruth,
        OracleKind::Simulated => OracleSpec::Simulated(SimOracleConfig {
            error_rate_at_min_confidence: a.error_rate,
            ..SimOracleConfig::default()
        }),
        OracleKind::Noisy => OracleSpec::Noisy(NoisyOracleConfig {
            flip_prob: a.flip_prob,
            confidence: ConfidenceDist::Uniform { lo: 0.0, hi: 1.0 },
            seed: 0,
        }),
    };
    let config = ExperimentConfig {
        arms,
        learner,
        oracle,
        split: SplitSpec {
            train_fraction: a.train_fraction,
            n_splits: a.splits,
            seed: a.seed,
        },
        budget: a.budget,
        batch_size: a.batch,
        n_seed: a.n_seed,
        seed: a.seed,
        ..ExperimentConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let (source, config, expected) = match &a.manifest {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let m = RunManifest::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
            (m.dataset, m.config, Some(m.results_sha256))
        }
        None => {
            let source = match (&a.dataset, a.synthetic) {
                (Some(path), _) => {
                    let schema = load_schema(path, a.schema.as_deref())?;
                    let path = fs::canonicalize(path).with_context(|| format!("dataset {}", path.display()))?;
                    DatasetSource::Csv { path, schema }
                }
                (None, Some(n)) => DatasetSource::Synthetic {
                    n,
                    anomaly_rate: a.anomaly_rate,
                    seed: a.data_seed.unwrap_or(a.seed),
                },
                (None, None) => unreachable!("clap requires a source"),
            };
            (source, simulation_config(&a)?, None)
        }
    };
    let dataset = source.load().context("loading dataset")?;
    eprintln!(
        "simulating {} arm(s) x {} split(s) on {} ({} rows)",
        config.arms.len(),
        config.split.n_splits,
        dataset.name(),
        dataset.len()
    );
    let result = run_experiment(&dataset, &config)?;

    let mut out = create(&a.out)?;
    out.write_all(result.to_csv().as_bytes())?;
    out.flush()?;
    let manifest_path = a.manifest_out.clone().unwrap_or_else(|| sibling(&a.out, "manifest.json"));
    let mut manifest = RunManifest::new(source, config, &result);
    manifest.artifacts.insert("results".into(), a.out.clone());
    manifest.artifacts.insert("manifest".into(), manifest_path.clone());
    fs::write(&manifest_path, manifest.to_json()? + "\n")
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    eprintln!(
        "wrote {} rows to {} (manifest {})",
        result.rows.len(),
        a.out.display(),
        manifest_path.display()
    );
    if let Some(expected) = expected {
        if expected != manifest.results_sha256 {
            bail!(
                "rerun produced different results: sha256 {} but manifest records {expected}",
                manifest.results_sha256
            );
        }
        eprintln!("results match manifest digest {expected}");
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &a.results {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        rows.extend(read_results_csv(file).with_context(|| format!("reading {}", path.display()))?);
    }
    let config = ReportConfig {
        metric: a.metric,
        checkpoints: a.checkpoints,
        flag_from: a.flag_from,
        baseline: a.baseline,
    };
    let report = build_report(&rows, &config)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        Some(path) => fs::write(path, json).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().write_all(json.as_bytes())?,
    }
    eprint!("{}", comparison_table(&report));
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut datasets: BTreeMap<String, Arc<Dataset>> = BTreeMap::new();
    if let Some(path) = &a.dataset {
        let schema = load_schema(path, a.schema.as_deref())?;
        let (ds, _) = load_csv(path, &schema).with_context(|| format!("loading {}", path.display()))?;
        datasets.insert(ds.name().to_string(), Arc::new(ds));
    }
    if let Some(n) = a.synthetic {
        datasets.insert("synthetic".into(), Arc::new(generate_synthetic_anomaly_dataset(n, 0.6, a.data_seed)?));
    }
    let (state, startup) = alkit_service::AppState::open(&a.data_dir, datasets)?;
    for w in &startup.warnings {
        eprintln!("warning: {w}");
    }

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", a.host, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        let local = listener.local_addr()?;
        tracing::info!(
            %local,
            data_dir = %a.data_dir.display(),
            recovered = startup.recovered.len(),
            "serving"
        );
        println!("listening on http://{local}");
        io::stdout().flush()?;
        alkit_service::serve(listener, state, shutdown_signal()).await?;
        tracing::info!("shut down cleanly");
        Ok(())
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown requested");
}

fn transform(a: TransformArgs) -> Result<()> {
    let file = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{}: missing column `{name}`", a.input.display()))
    };
    let label_at = find(&a.label_col)?;
    let conf_at = find(&a.confidence_col)?;
    if header.iter().any(|h| h == a.out_col) {
        bail!("{}: column `{}` already present", a.input.display(), a.out_col);
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("{}: malformed csv", a.input.display()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let label: u8 = field(label_at)
            .parse()
            .ok()
            .with_context(|| format!("line {line}: label `{}` is not 0 or 1", field(label_at)))?;
        let conf: u8 = field(conf_at)
            .parse()
            .ok()
            .with_context(|| format!("line {line}: confidence `{}` is not an integer 0-10", field(conf_at)))?;
        let value = transform_confidence_label(label, conf).with_context(|| format!("line {line}"))?;
        let mut out = record.clone();
        out.push_field(&value.to_string());
        rows.push(out);
    }

    let sink: Box<dyn Write> = match &a.output {
        Some(path) => Box::new(create(path)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut writer = csv::Writer::from_writer(sink);
    let mut head = header.clone();
    head.push_field(&a.out_col);
    writer.write_record(&head)?;
    for r in &rows {
        writer.write_record(r)?;
    }
    writer.flush()?;
    Ok(())
}
