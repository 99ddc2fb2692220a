//! Experiment specifications and the multi-seed driver.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};

use crate::betting::{BettingPreset, CautiousConfig};
use crate::ensemble::{self, EnsembleConfig, RunRecord, DEFAULT_THETAS};
use crate::error::{Error, Result};
use crate::eval::{accuracy, AccuracyEstimate, AccuracyReport};
use crate::martingale::MartingaleConfig;
use crate::rng::{self, Purpose};
use crate::stream::{
    generate_sea, generate_stagger, inject_label_noise, load_csv, Attribute, ConceptSchedule,
    FeatureSchema, LabeledInstance, NoiseMode, NoiseSpec,
};

/// Training size of a lone pipeline when none is given.
pub const DEFAULT_SINGLE_THETA: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Stagger,
    Sea,
    Csv {
        path: PathBuf,
        label_column: String,
        /// Feature columns, in order.
        columns: Vec<String>,
        /// Class names as they appear in the label column.
        classes: Vec<String>,
        /// Level names of categorical columns; other columns are numeric.
        #[serde(default)]
        categorical: BTreeMap<String, Vec<String>>,
    },
}

impl DatasetSpec {
    pub fn schema(&self) -> Result<FeatureSchema> {
        match self {
            DatasetSpec::Stagger => Ok(FeatureSchema::stagger()),
            DatasetSpec::Sea => Ok(FeatureSchema::sea()),
            DatasetSpec::Csv {
                columns,
                classes,
                categorical,
                ..
            } => {
                let attributes = columns
                    .iter()
                    .map(|c| match categorical.get(c) {
                        Some(levels) => {
                            let levels: Vec<&str> = levels.iter().map(String::as_str).collect();
                            Attribute::categorical(c, &levels)
                        }
                        None => Attribute::numeric(c, f64::NEG_INFINITY, f64::INFINITY),
                    })
                    .collect();
                FeatureSchema::new(attributes, classes.clone())
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Stagger => "stagger",
            DatasetSpec::Sea => "sea",
            DatasetSpec::Csv { .. } => "csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Single,
    #[default]
    Ensemble,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Single => "single",
            Mode::Ensemble => "ensemble",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Mode::Single),
            "ensemble" => Ok(Mode::Ensemble),
            _ => Err(Error::Config(format!(
                "unknown mode `{s}` (single, ensemble)"
            ))),
        }
    }
}

/// Everything needed to reproduce a set of runs. Optional fields have
/// dataset-dependent defaults filled in by [`ExperimentSpec::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    /// Stream length; for CSV input, `None` reads the whole file.
    #[serde(default)]
    pub n: Option<u64>,
    /// Instances per concept for the generators.
    #[serde(default)]
    pub chunk_size: Option<u64>,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_noise_mode")]
    pub noise_mode: NoiseMode,
    #[serde(default = "default_betting")]
    pub betting: BettingPreset,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub thetas: Option<Vec<usize>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_tree_count")]
    pub tree_count: usize,
    #[serde(default)]
    pub pvalue_window: Option<usize>,
}

fn default_noise_mode() -> NoiseMode {
    NoiseMode::Resample
}
fn default_betting() -> BettingPreset {
    BettingPreset::Mihnn
}
fn default_epsilon() -> f64 {
    CautiousConfig::DEFAULT_EPSILON
}
fn default_window() -> usize {
    CautiousConfig::DEFAULT_WINDOW
}
fn default_r() -> f64 {
    10.0
}
fn default_delta() -> f64 {
    0.01
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn default_tree_count() -> usize {
    EnsembleConfig::DEFAULT_TREE_COUNT
}

impl ExperimentSpec {
    pub fn new(dataset: DatasetSpec) -> Self {
        ExperimentSpec {
            dataset,
            n: None,
            chunk_size: None,
            noise: 0.0,
            noise_mode: default_noise_mode(),
            betting: default_betting(),
            epsilon: default_epsilon(),
            window: default_window(),
            mode: Mode::default(),
            r: default_r(),
            delta: default_delta(),
            thetas: None,
            seeds: default_seeds(),
            tree_count: default_tree_count(),
            pvalue_window: None,
        }
    }

    /// Copy with every dataset-dependent default made explicit, validated.
    pub fn resolve(&self) -> Result<Self> {
        let mut spec = self.clone();
        let generated = !matches!(spec.dataset, DatasetSpec::Csv { .. });
        if generated {
            let n = *spec.n.get_or_insert(100_000);
            if spec.chunk_size.is_none() {
                spec.chunk_size = Some(match spec.dataset {
                    DatasetSpec::Stagger => 10_000,
                    _ => (n / 4).max(1),
                });
            }
        }
        if spec.thetas.is_none() {
            spec.thetas = Some(match spec.mode {
                Mode::Single => vec![DEFAULT_SINGLE_THETA],
                Mode::Ensemble => DEFAULT_THETAS.to_vec(),
            });
        }
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.chunk_size == Some(0) {
            return Err(Error::Config("chunk size must be at least 1".into()));
        }
        NoiseSpec::new(self.noise, 0)?;
        if self.mode == Mode::Single && self.thetas.as_ref().is_some_and(|t| t.len() != 1) {
            return Err(Error::Config(
                "single mode takes exactly one training size".into(),
            ));
        }
        self.dataset.schema()?;
        self.ensemble_config(0)?;
        Ok(())
    }

    /// Detector configuration for one seed; the spec must be resolved.
    pub fn ensemble_config(&self, seed: u64) -> Result<EnsembleConfig> {
        let thetas = self
            .thetas
            .as_deref()
            .ok_or_else(|| Error::Config("training sizes not resolved".into()))?;
        let mut martingale = MartingaleConfig::new(self.delta, self.r)?;
        martingale.pvalue_window = self.pvalue_window;
        let betting = CautiousConfig::new(self.epsilon, self.window, self.betting.estimators())?;
        let mut config = EnsembleConfig::new(thetas, betting, martingale, seed)?;
        config.tree_count = self.tree_count;
        config.validate()?;
        Ok(config)
    }

    /// Labelled stream for one seed, noise included.
    pub fn stream(&self, seed: u64) -> Result<Box<dyn Iterator<Item = Result<LabeledInstance>>>> {
        let clean: Box<dyn Iterator<Item = Result<LabeledInstance>>> = match &self.dataset {
            DatasetSpec::Stagger => Box::new(
                generate_stagger(
                    self.n_or_err()?,
                    ConceptSchedule::cycling(4, self.chunk_or_err()?)?,
                    seed,
                )?
                .map(Ok),
            ),
            DatasetSpec::Sea => Box::new(
                generate_sea(
                    self.n_or_err()?,
                    ConceptSchedule::sequential(4, self.chunk_or_err()?)?,
                    seed,
                )?
                .map(Ok),
            ),
            DatasetSpec::Csv {
                path,
                label_column,
                columns,
                ..
            } => {
                let rows = load_csv(path, &self.dataset.schema()?, label_column, columns)?;
                match self.n {
                    Some(n) => Box::new(rows.take(n as usize)),
                    None => Box::new(rows),
                }
            }
        };
        if self.noise == 0.0 {
            return Ok(clean);
        }
        let spec = NoiseSpec::with_mode(
            self.noise,
            rng::derive_seed(seed, Purpose::Noise, 0),
            self.noise_mode,
        )?;
        // The noise adapter takes plain instances, so surface source errors first.
        let mut failed = None;
        let source: Vec<LabeledInstance> = clean
            .map_while(|z| match z {
                Ok(z) => Some(z),
                Err(e) => {
                    failed = Some(e);
                    None
                }
            })
            .collect();
        if let Some(e) = failed {
            return Err(e);
        }
        Ok(Box::new(inject_label_noise(source, spec)))
    }

    fn n_or_err(&self) -> Result<u64> {
        self.n
            .ok_or_else(|| Error::Config("stream length not resolved".into()))
    }

    fn chunk_or_err(&self) -> Result<u64> {
        self.chunk_size
            .ok_or_else(|| Error::Config("chunk size not resolved".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub instances: u64,
    pub accuracy: f64,
    #[serde(flatten)]
    pub report: AccuracyReport,
    pub alarms: BTreeMap<u32, usize>,
    pub retrains: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub config: ExperimentSpec,
    pub runs: Vec<SeedSummary>,
    /// Mean of the per-seed accuracies.
    pub mean_accuracy: f64,
    /// Accuracy over all seeds' available predictions, for the Z-test.
    pub pooled: AccuracyEstimate,
    pub unavailable: u64,
}

impl Summary {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn summarize(seed: u64, record: &RunRecord) -> Result<SeedSummary> {
    let report = accuracy(record)?;
    Ok(SeedSummary {
        seed,
        instances: record.rows.len() as u64,
        accuracy: report.p_hat().unwrap_or(0.0),
        report,
        alarms: record.alarms_per_pipeline().into_iter().collect(),
        retrains: record.retrains.len(),
    })
}

/// Runs every seed, handing each record to `sink` before moving on.
pub fn run_experiment_with<F>(spec: &ExperimentSpec, mut sink: F) -> Result<Summary>
where
    F: FnMut(u64, &RunRecord) -> Result<()>,
{
    let spec = spec.resolve()?;
    let schema = spec.dataset.schema()?;
    let mut runs = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let config = spec.ensemble_config(seed)?;
        let record = ensemble::run(spec.stream(seed)?, &schema, &config)?;
        let summary = summarize(seed, &record)?;
        info!(
            "{} {} {} seed {seed}: accuracy {:.4}, unavailable {}, alarms {}",
            spec.dataset.name(),
            spec.mode,
            spec.betting,
            summary.accuracy,
            summary.report.unavailable,
            record.alarms.len()
        );
        sink(seed, &record)?;
        runs.push(summary);
    }
    let reports: Vec<AccuracyReport> = runs.iter().map(|r| r.report).collect();
    Ok(Summary {
        dataset: spec.dataset.name().to_string(),
        mean_accuracy: runs.iter().map(|r| r.accuracy).sum::<f64>() / runs.len() as f64,
        pooled: AccuracyEstimate::pooled(&reports)?,
        unavailable: reports.iter().map(|r| r.unavailable).sum(),
        runs,
        config: spec,
    })
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<Summary> {
    run_experiment_with(spec, |_, _| Ok(()))
}
