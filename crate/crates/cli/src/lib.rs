//! Command implementations behind the `icm-drift` binary.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::Value;
use thiserror::Error;

use icm_drift::betting::BettingPreset;
use icm_drift::ensemble::{read_record_csv, write_record_csv};
use icm_drift::eval::{
    subset_analysis, write_subsets_csv, z_test, HypothesisTestResult, SubsetResult,
};
use icm_drift::experiment::{run_experiment_with, DatasetSpec, ExperimentSpec, Mode, Summary};
use icm_drift::stream::{write_csv, NoiseMode};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] icm_drift::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: icm_drift::Error,
    },
}

impl CliError {
    fn at(path: &Path) -> impl FnOnce(icm_drift::Error) -> CliError + '_ {
        move |source| CliError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    fn inner(&self) -> &icm_drift::Error {
        match self {
            CliError::Core(e) | CliError::File { source: e, .. } => e,
        }
    }

    /// 2 for a bad specification, 3 for bad input data, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        let e = self.inner();
        if e.is_config_error() {
            2
        } else if e.is_data_error() {
            3
        } else {
            4
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| CliError::File {
        path: path.to_path_buf(),
        source: e.into(),
    })
}

#[derive(Debug, Parser)]
#[command(
    name = "icm-drift",
    version,
    about = "Concept-drift detection with inductive conformal martingales"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic stream to CSV.
    Generate(GenerateArgs),
    /// Run the detector over one or more seeds.
    Run(RunArgs),
    /// Re-vote every subset of pipelines from recorded runs.
    Subsets(SubsetsArgs),
    /// Compare the pooled accuracies of two run summaries.
    Ttest(TtestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetKind {
    Stagger,
    Sea,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseKind {
    Flip,
    Resample,
}

impl From<NoiseKind> for NoiseMode {
    fn from(k: NoiseKind) -> Self {
        match k {
            NoiseKind::Flip => NoiseMode::Flip,
            NoiseKind::Resample => NoiseMode::Resample,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct StreamArgs {
    #[arg(long, value_enum, default_value = "stagger")]
    pub dataset: DatasetKind,
    /// Stream length (default 100000; whole file for CSV input).
    #[arg(long)]
    pub n: Option<u64>,
    /// Instances per concept (default 10000 for STAGGER, n/4 for SEA).
    #[arg(long)]
    pub chunk_size: Option<u64>,
    /// Label-noise rate.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, value_enum, default_value = "resample")]
    pub noise_mode: NoiseKind,
    /// CSV input file.
    #[arg(long, required_if_eq("dataset", "csv"))]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Feature columns to keep, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
    /// Class names in the label column, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    pub classes: Vec<String>,
}

impl StreamArgs {
    fn dataset(&self) -> icm_drift::Result<DatasetSpec> {
        Ok(match self.dataset {
            DatasetKind::Stagger => DatasetSpec::Stagger,
            DatasetKind::Sea => DatasetSpec::Sea,
            DatasetKind::Csv => {
                if self.columns.is_empty() {
                    return Err(icm_drift::Error::Config(
                        "--columns is required for CSV input".into(),
                    ));
                }
                DatasetSpec::Csv {
                    path: self
                        .csv
                        .clone()
                        .ok_or_else(|| icm_drift::Error::Config("--csv is required".into()))?,
                    label_column: self.label_column.clone(),
                    columns: self.columns.clone(),
                    classes: self.classes.clone(),
                    categorical: Default::default(),
                }
            }
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub stream: StreamArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub stream: StreamArgs,
    #[arg(long, default_value = "MIHNN")]
    pub betting: String,
    #[arg(long, default_value = "ensemble")]
    pub mode: String,
    #[arg(long, default_value_t = 10.0)]
    pub r: f64,
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    /// Training sizes, comma separated (default 100,...,1000; 300 in single mode).
    #[arg(long, value_delimiter = ',')]
    pub theta: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 40)]
    pub tree_count: usize,
    /// JSON experiment specification; its fields override the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl RunArgs {
    /// The specification from the flags, overlaid with the config file.
    pub fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::new(self.stream.dataset()?);
        spec.n = self.stream.n;
        spec.chunk_size = self.stream.chunk_size;
        spec.noise = self.stream.noise;
        spec.noise_mode = self.stream.noise_mode.into();
        spec.betting = self.betting.parse::<BettingPreset>()?;
        spec.mode = self.mode.parse::<Mode>()?;
        spec.r = self.r;
        spec.delta = self.delta;
        spec.thetas = (!self.theta.is_empty()).then(|| self.theta.clone());
        spec.seeds = self.seeds.clone();
        spec.tree_count = self.tree_count;
        let Some(path) = &self.config else {
            return Ok(spec);
        };
        let text = io(path, fs::read_to_string(path))?;
        let overrides: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::at(path)(icm_drift::Error::Config(e.to_string())))?;
        let Value::Object(overrides) = overrides else {
            return Err(CliError::at(path)(icm_drift::Error::Config(
                "configuration must be a JSON object".into(),
            )));
        };
        let mut merged = serde_json::to_value(&spec).map_err(icm_drift::Error::from)?;
        if let Value::Object(base) = &mut merged {
            base.extend(overrides);
        }
        serde_json::from_value(merged)
            .map_err(|e| CliError::at(path)(icm_drift::Error::Config(e.to_string())))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SubsetsArgs {
    /// Run record CSV files written by `run`.
    #[arg(required = true)]
    pub records: Vec<PathBuf>,
    /// Subset sizes to evaluate, comma separated (default all).
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TtestArgs {
    /// Summary of the configuration expected to be more accurate.
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub rho: f64,
    /// Output JSON file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        io(dir, fs::create_dir_all(dir))?;
    }
    Ok(BufWriter::new(io(path, File::create(path))?))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<u64> {
    let mut spec = ExperimentSpec::new(args.stream.dataset()?);
    spec.n = args.stream.n;
    spec.chunk_size = args.stream.chunk_size;
    spec.noise = args.stream.noise;
    spec.noise_mode = args.stream.noise_mode.into();
    spec.seeds = vec![args.seed];
    let spec = spec.resolve()?;
    let instances = spec
        .stream(args.seed)?
        .collect::<icm_drift::Result<Vec<_>>>()?;
    let count = instances.len() as u64;
    write_csv(create(&args.out)?, &spec.dataset.schema()?, instances)
        .map_err(CliError::at(&args.out))?;
    info!("wrote {count} instances to {}", args.out.display());
    Ok(count)
}

/// Record file name for one seed.
pub fn record_file(seed: u64) -> String {
    format!("run_seed{seed}.csv")
}

pub fn cmd_run(args: &RunArgs) -> Result<Summary> {
    let spec = args.spec()?;
    io(&args.out, fs::create_dir_all(&args.out))?;
    let summary = run_experiment_with(&spec, |seed, record| {
        let path = args.out.join(record_file(seed));
        let file = create(&path).map_err(|e| match e {
            CliError::Core(e) | CliError::File { source: e, .. } => e,
        })?;
        write_record_csv(file, record)
    })?;
    let path = args.out.join("summary.json");
    io(&path, fs::write(&path, summary.to_json()?))?;
    Ok(summary)
}

/// Pools the subset results of several records of the same pipelines.
pub fn cmd_subsets(args: &SubsetsArgs) -> Result<Vec<SubsetResult>> {
    let mut ids: Option<Vec<u32>> = None;
    let mut pooled: Vec<SubsetResult> = Vec::new();
    for path in &args.records {
        let record = read_record_csv(io(path, File::open(path))?, 0).map_err(CliError::at(path))?;
        match &ids {
            None => ids = Some(record.pipeline_ids.clone()),
            Some(ids) if *ids != record.pipeline_ids => {
                return Err(CliError::at(path)(icm_drift::Error::RecordMismatch(
                    format!("pipelines {:?} differ from {:?}", record.pipeline_ids, ids),
                )))
            }
            _ => {}
        }
        let results = subset_analysis(&record, &args.sizes).map_err(CliError::at(path))?;
        if pooled.is_empty() {
            pooled = results;
        } else {
            for (acc, r) in pooled.iter_mut().zip(results) {
                acc.correct += r.correct;
                acc.available += r.available;
                acc.unavailable += r.unavailable;
            }
        }
    }
    for r in &mut pooled {
        r.accuracy = (r.available > 0).then(|| r.correct as f64 / r.available as f64);
    }
    write_subsets_csv(create(&args.out)?, ids.as_deref().unwrap_or(&[]), &pooled)
        .map_err(CliError::at(&args.out))?;
    Ok(pooled)
}

fn read_summary(path: &Path) -> Result<Summary> {
    Summary::from_json(&io(path, fs::read_to_string(path))?).map_err(CliError::at(path))
}

pub fn cmd_ttest(args: &TtestArgs) -> Result<HypothesisTestResult> {
    let (a, b) = (read_summary(&args.a)?, read_summary(&args.b)?);
    let result = z_test(&a.pooled, &b.pooled, args.rho)?;
    let json = serde_json::to_string_pretty(&result).map_err(icm_drift::Error::from)?;
    match &args.out {
        Some(path) => io(path, fs::write(path, json))?,
        None => println!("{json}"),
    }
    Ok(result)
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(args) => {
            cmd_generate(args)?;
        }
        Command::Run(args) => {
            let summary = cmd_run(args)?;
            println!(
                "mean accuracy {:.4} over {} seed(s)",
                summary.mean_accuracy,
                summary.runs.len()
            );
        }
        Command::Subsets(args) => {
            cmd_subsets(args)?;
        }
        Command::Ttest(args) => {
            cmd_ttest(args)?;
        }
    }
    Ok(())
}
