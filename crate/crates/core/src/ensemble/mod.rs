//! Several ICM pipelines voting on every prediction.
//!
//! Each pipeline owns a forest trained on `theta` consecutive instances, a
//! score history, a cautious betting state and a martingale. For every new
//! instance an active pipeline first predicts, then scores the instance with
//! its true label and bets on the resulting p-value. When its martingale
//! alarms, the pipeline stops predicting, forgets its scores and martingale,
//! and waits until `theta` instances starting at the anchor `d` are
//! available; it retrains on `z_d ..= z_{d + theta - 1}` at the end of the
//! step that delivers the last of them and votes again from the next step.
//!
//! Pipelines share nothing but the incoming instances: every random draw
//! comes from a stream keyed by the pipeline id, so removing one pipeline
//! leaves the others bit-for-bit unchanged.

mod record;

use std::collections::{BTreeMap, VecDeque};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::betting::{BetDecision, CautiousBetting, CautiousConfig};
use crate::conformal::{self, ScoreHistory, TieBreaker};
use crate::error::{Error, Result};
use crate::forest::{ForestModel, Posterior};
use crate::martingale::{AlarmEvent, MartingaleConfig, MartingaleState};
use crate::rng::{self, Purpose};
use crate::stream::{FeatureSchema, Label, LabeledInstance};

pub use record::{read_record_csv, write_record_csv, RecordRow, RunRecord};

/// Training sizes of the ten-pipeline ensemble.
pub const DEFAULT_THETAS: [usize; 10] = [100, 200, 300, 400, 500, 600, 700, 800, 900, 1000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSpec {
    /// Stable identifier; keys the pipeline's random streams.
    pub id: u32,
    pub theta: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub pipelines: Vec<PipelineSpec>,
    pub martingale: MartingaleConfig,
    pub betting: CautiousConfig,
    pub tree_count: usize,
    pub seed: u64,
    /// Number of most recent instances kept for retraining.
    pub buffer_cap: usize,
}

impl EnsembleConfig {
    pub const DEFAULT_TREE_COUNT: usize = 40;
    pub const DEFAULT_BUFFER_CAP: usize = 50_000;

    /// Pipelines numbered from 1 in the order of `thetas`.
    pub fn new(
        thetas: &[usize],
        betting: CautiousConfig,
        martingale: MartingaleConfig,
        seed: u64,
    ) -> Result<Self> {
        let config = EnsembleConfig {
            pipelines: thetas
                .iter()
                .enumerate()
                .map(|(i, &theta)| PipelineSpec {
                    id: i as u32 + 1,
                    theta,
                })
                .collect(),
            martingale,
            betting,
            tree_count: Self::DEFAULT_TREE_COUNT,
            seed,
            buffer_cap: Self::DEFAULT_BUFFER_CAP,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pipelines.is_empty() {
            return Err(Error::Config("at least one pipeline is required".into()));
        }
        let mut ids: Vec<u32> = self.pipelines.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.pipelines.len() {
            return Err(Error::Config("pipeline ids must be distinct".into()));
        }
        if self.pipelines.iter().any(|p| p.theta == 0) {
            return Err(Error::Config("training size must be at least 1".into()));
        }
        if self.tree_count == 0 {
            return Err(Error::Config("tree count must be at least 1".into()));
        }
        let max_theta = self.pipelines.iter().map(|p| p.theta).max().unwrap_or(0);
        if self.buffer_cap < max_theta {
            return Err(Error::Config(format!(
                "instance buffer ({}) is smaller than the largest training size ({max_theta})",
                self.buffer_cap
            )));
        }
        self.martingale.validate()?;
        self.betting.validate()
    }

    /// Same configuration restricted to the pipelines in `ids`.
    pub fn subset(&self, ids: &[u32]) -> Self {
        EnsembleConfig {
            pipelines: self
                .pipelines
                .iter()
                .filter(|p| ids.contains(&p.id))
                .copied()
                .collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStatus {
    AwaitingTraining,
    Active,
}

/// One pipeline's prediction for the current instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub pipeline: u32,
    pub label: Label,
    /// Posterior of `label`.
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineAlarm {
    pub pipeline: u32,
    #[serde(flatten)]
    pub event: AlarmEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrainEvent {
    pub pipeline: u32,
    /// Step at whose end the model was fitted.
    pub at: u64,
    /// First timestamp of the training window.
    pub start: u64,
    pub len: usize,
}

/// Everything observable about one pipeline's processing of one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTrace {
    pub score: f64,
    pub pvalue: f64,
    pub bet: BetDecision,
    pub log_s: f64,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    spec: PipelineSpec,
    schema: FeatureSchema,
    tree_count: usize,
    seed: u64,
    status: PipelineStatus,
    model: Option<ForestModel>,
    scores: ScoreHistory,
    betting: CautiousBetting,
    martingale: MartingaleState,
    tie_breaker: TieBreaker,
    /// Start of the next training window.
    pending_start: u64,
    training_window: Option<(u64, usize)>,
    retrain_count: u64,
    last_trace: Option<StepTrace>,
}

impl Pipeline {
    fn new(
        spec: PipelineSpec,
        schema: &FeatureSchema,
        config: &EnsembleConfig,
        start: u64,
    ) -> Result<Self> {
        Ok(Pipeline {
            spec,
            schema: schema.clone(),
            tree_count: config.tree_count,
            seed: config.seed,
            status: PipelineStatus::AwaitingTraining,
            model: None,
            scores: ScoreHistory::new(),
            betting: CautiousBetting::new(config.betting.clone(), config.martingale.pvalue_window)?,
            martingale: MartingaleState::new(config.martingale)?,
            tie_breaker: TieBreaker::new(config.seed, spec.id as u64),
            pending_start: start,
            training_window: None,
            retrain_count: 0,
            last_trace: None,
        })
    }

    pub fn spec(&self) -> PipelineSpec {
        self.spec
    }

    pub fn status(&self) -> PipelineStatus {
        self.status
    }

    pub fn model(&self) -> Option<&ForestModel> {
        self.model.as_ref()
    }

    pub fn scores(&self) -> &ScoreHistory {
        &self.scores
    }

    pub fn betting(&self) -> &CautiousBetting {
        &self.betting
    }

    pub fn martingale(&self) -> &MartingaleState {
        &self.martingale
    }

    /// Anchor of the window the pipeline is waiting for.
    pub fn pending_start(&self) -> u64 {
        self.pending_start
    }

    /// `(start, len)` of the current model's training window.
    pub fn training_window(&self) -> Option<(u64, usize)> {
        self.training_window
    }

    /// Score, p-value, bet and martingale of the last processed instance,
    /// if the pipeline was active for it.
    pub fn last_trace(&self) -> Option<StepTrace> {
        self.last_trace
    }

    /// Predicts `z`, then consumes its label. Returns the vote and, when the
    /// martingale crosses the threshold, the alarm.
    fn observe(&mut self, z: &LabeledInstance) -> Result<(Option<Vote>, Option<AlarmEvent>)> {
        self.last_trace = None;
        let Some(model) = self
            .model
            .as_ref()
            .filter(|_| self.status == PipelineStatus::Active)
        else {
            return Ok((None, None));
        };
        let posterior = Posterior::from_votes(&model.votes_unchecked(&z.features));
        let label = posterior.argmax();
        let vote = Vote {
            pipeline: self.spec.id,
            label,
            confidence: posterior.probabilities()[label as usize],
        };
        let score = conformal::score(&posterior, z.label)?;
        self.scores.push(score);
        let pvalue = self.scores.pvalue(self.tie_breaker.draw())?;
        let bet = self.betting.bet(pvalue)?;
        self.martingale.update(z.timestamp, &bet)?;
        self.last_trace = Some(StepTrace {
            score,
            pvalue,
            bet,
            log_s: self.martingale.log_s(),
        });
        let alarm = self.martingale.check_alarm();
        if alarm.is_some() {
            self.status = PipelineStatus::AwaitingTraining;
            self.model = None;
            self.scores.clear();
            self.martingale.reset();
            self.betting.reset();
        }
        Ok((Some(vote), alarm))
    }

    fn ready(&self, now: u64) -> bool {
        self.status == PipelineStatus::AwaitingTraining
            && now + 1 >= self.pending_start + self.spec.theta as u64
    }

    fn retrain(&mut self, window: &[LabeledInstance], now: u64) -> Result<RetrainEvent> {
        let key = ((self.spec.id as u64) << 32) | self.retrain_count;
        let seed = rng::derive_seed(self.seed, Purpose::Retrain, key);
        self.model = Some(ForestModel::train(
            &self.schema,
            window,
            self.tree_count,
            seed,
        )?);
        self.retrain_count += 1;
        self.status = PipelineStatus::Active;
        self.training_window = Some((self.pending_start, window.len()));
        Ok(RetrainEvent {
            pipeline: self.spec.id,
            at: now,
            start: self.pending_start,
            len: window.len(),
        })
    }
}

/// Outcome of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub timestamp: u64,
    /// `None` when no pipeline was able to predict.
    pub prediction: Option<Label>,
    pub votes: Vec<Vote>,
    pub alarms: Vec<PipelineAlarm>,
    pub retrained: Vec<RetrainEvent>,
}

/// Most frequent label; ties go to the larger mean confidence among the tied
/// labels' voters, then to the smaller label. `None` without votes.
pub fn majority_vote(votes: &[Vote]) -> Option<Label> {
    let mut tally: BTreeMap<Label, (usize, f64)> = BTreeMap::new();
    for v in votes {
        let entry = tally.entry(v.label).or_default();
        entry.0 += 1;
        entry.1 += v.confidence;
    }
    let mut best: Option<(Label, usize, f64)> = None;
    for (label, (count, total)) in tally {
        let mean = total / count as f64;
        let better = match best {
            None => true,
            Some((_, c, m)) => count > c || (count == c && mean > m),
        };
        if better {
            best = Some((label, count, mean));
        }
    }
    best.map(|(label, _, _)| label)
}

pub struct Ensemble {
    config: EnsembleConfig,
    schema: FeatureSchema,
    pipelines: Vec<Pipeline>,
    buffer: VecDeque<LabeledInstance>,
    last_timestamp: Option<u64>,
}

impl Ensemble {
    pub fn new(schema: &FeatureSchema, config: EnsembleConfig) -> Result<Self> {
        config.validate()?;
        Ok(Ensemble {
            schema: schema.clone(),
            pipelines: Vec::new(),
            buffer: VecDeque::new(),
            last_timestamp: None,
            config,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    /// Pipelines in configuration order; empty before the first step.
    pub fn pipelines(&self) -> &[Pipeline] {
        &self.pipelines
    }

    /// Processes `z`. Timestamps must be consecutive.
    pub fn step(&mut self, z: &LabeledInstance) -> Result<VoteResult> {
        self.schema.check_instance(z)?;
        match self.last_timestamp {
            Some(previous) if z.timestamp != previous + 1 => {
                return Err(Error::OutOfOrder {
                    previous,
                    got: z.timestamp,
                })
            }
            None => {
                self.pipelines = self
                    .config
                    .pipelines
                    .iter()
                    .map(|&spec| Pipeline::new(spec, &self.schema, &self.config, z.timestamp))
                    .collect::<Result<_>>()?;
            }
            _ => {}
        }
        self.last_timestamp = Some(z.timestamp);
        self.buffer.push_back(z.clone());
        if self.buffer.len() > self.config.buffer_cap {
            self.buffer.pop_front();
        }
        let oldest = self.buffer.front().map_or(z.timestamp, |b| b.timestamp);

        let mut votes = Vec::new();
        let mut alarms = Vec::new();
        for pipeline in &mut self.pipelines {
            let (vote, alarm) = pipeline.observe(z)?;
            votes.extend(vote);
            if let Some(mut event) = alarm {
                if event.anchor < oldest {
                    warn!(
                        "pipeline {}: anchor {} precedes the instance buffer, using {oldest}",
                        pipeline.spec.id, event.anchor
                    );
                    event.anchor = oldest;
                }
                debug!(
                    "pipeline {} alarm at {} (log S = {:.3}), anchor {}",
                    pipeline.spec.id, event.at, event.log_s, event.anchor
                );
                pipeline.pending_start = event.anchor;
                alarms.push(PipelineAlarm {
                    pipeline: pipeline.spec.id,
                    event,
                });
            }
        }

        let mut retrained = Vec::new();
        for pipeline in &mut self.pipelines {
            if pipeline.ready(z.timestamp) {
                let skip = (pipeline.pending_start - oldest) as usize;
                let window: Vec<LabeledInstance> = self
                    .buffer
                    .iter()
                    .skip(skip)
                    .take(pipeline.spec.theta)
                    .cloned()
                    .collect();
                retrained.push(pipeline.retrain(&window, z.timestamp)?);
            }
        }

        Ok(VoteResult {
            timestamp: z.timestamp,
            prediction: majority_vote(&votes),
            votes,
            alarms,
            retrained,
        })
    }
}

/// Runs the ensemble over a whole stream.
pub fn run<I>(stream: I, schema: &FeatureSchema, config: &EnsembleConfig) -> Result<RunRecord>
where
    I: IntoIterator<Item = Result<LabeledInstance>>,
{
    let mut ensemble = Ensemble::new(schema, config.clone())?;
    let mut record = RunRecord::new(config.pipelines.iter().map(|p| p.id).collect(), config.seed);
    for z in stream {
        let z = z?;
        let result = ensemble.step(&z)?;
        record.push(z.label, result);
    }
    Ok(record)
}
