use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{PipelineAlarm, RetrainEvent, Vote, VoteResult};
use crate::error::{Error, Result};
use crate::stream::Label;

const NA: &str = "NA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub timestamp: u64,
    pub label: Label,
    pub ensemble: Option<Label>,
    /// `(label, confidence)` per pipeline, in [`RunRecord::pipeline_ids`] order.
    pub predictions: Vec<Option<(Label, f64)>>,
    pub alarmed: Vec<bool>,
}

impl RecordRow {
    /// Votes of the pipelines at the given column positions.
    pub fn votes(&self, ids: &[u32], columns: &[usize]) -> Vec<Vote> {
        columns
            .iter()
            .filter_map(|&c| {
                self.predictions[c].map(|(label, confidence)| Vote {
                    pipeline: ids[c],
                    label,
                    confidence,
                })
            })
            .collect()
    }
}

/// Per-instance outcome of a run, plus its alarm and retraining events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub pipeline_ids: Vec<u32>,
    pub seed: u64,
    pub rows: Vec<RecordRow>,
    pub alarms: Vec<PipelineAlarm>,
    pub retrains: Vec<RetrainEvent>,
}

impl RunRecord {
    pub fn new(pipeline_ids: Vec<u32>, seed: u64) -> Self {
        RunRecord {
            pipeline_ids,
            seed,
            rows: Vec::new(),
            alarms: Vec::new(),
            retrains: Vec::new(),
        }
    }

    pub fn push(&mut self, label: Label, result: VoteResult) {
        let column = |id: u32| self.pipeline_ids.iter().position(|&p| p == id);
        let mut predictions = vec![None; self.pipeline_ids.len()];
        let mut alarmed = vec![false; self.pipeline_ids.len()];
        for v in &result.votes {
            if let Some(c) = column(v.pipeline) {
                predictions[c] = Some((v.label, v.confidence));
            }
        }
        for a in &result.alarms {
            if let Some(c) = column(a.pipeline) {
                alarmed[c] = true;
            }
        }
        self.rows.push(RecordRow {
            timestamp: result.timestamp,
            label,
            ensemble: result.prediction,
            predictions,
            alarmed,
        });
        self.alarms.extend(result.alarms);
        self.retrains.extend(result.retrained);
    }

    /// Alarm count per pipeline, in id order.
    pub fn alarms_per_pipeline(&self) -> Vec<(u32, usize)> {
        self.pipeline_ids
            .iter()
            .map(|&id| (id, self.alarms.iter().filter(|a| a.pipeline == id).count()))
            .collect()
    }

    /// The record with only the listed pipelines' columns and events.
    pub fn project(&self, ids: &[u32]) -> Result<RunRecord> {
        let columns = ids
            .iter()
            .map(|id| {
                self.pipeline_ids
                    .iter()
                    .position(|p| p == id)
                    .ok_or_else(|| Error::RecordMismatch(format!("no pipeline {id} in record")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RunRecord {
            pipeline_ids: ids.to_vec(),
            seed: self.seed,
            rows: self
                .rows
                .iter()
                .map(|r| RecordRow {
                    timestamp: r.timestamp,
                    label: r.label,
                    ensemble: super::majority_vote(&r.votes(&self.pipeline_ids, &columns)),
                    predictions: columns.iter().map(|&c| r.predictions[c]).collect(),
                    alarmed: columns.iter().map(|&c| r.alarmed[c]).collect(),
                })
                .collect(),
            alarms: self
                .alarms
                .iter()
                .filter(|a| ids.contains(&a.pipeline))
                .copied()
                .collect(),
            retrains: self
                .retrains
                .iter()
                .filter(|a| ids.contains(&a.pipeline))
                .copied()
                .collect(),
        })
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| NA.to_string(), |v| v.to_string())
}

/// Writes one row per instance:
/// `timestamp,label,ensemble,pred_<id>...,conf_<id>...,alarm_<id>...`
/// with `NA` for missing predictions. Events are not part of the file.
pub fn write_record_csv<W: Write>(writer: W, record: &RunRecord) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string(), "label".into(), "ensemble".into()];
    for prefix in ["pred", "conf", "alarm"] {
        header.extend(
            record
                .pipeline_ids
                .iter()
                .map(|id| format!("{prefix}_{id}")),
        );
    }
    out.write_record(&header)?;
    for r in &record.rows {
        let mut row = vec![
            r.timestamp.to_string(),
            r.label.to_string(),
            opt(r.ensemble),
        ];
        row.extend(r.predictions.iter().map(|p| opt(p.map(|(l, _)| l))));
        row.extend(
            r.predictions
                .iter()
                .map(|p| opt(p.map(|(_, c)| format!("{c:?}")))),
        );
        row.extend(r.alarmed.iter().map(|&a| (a as u8).to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a file written by [`write_record_csv`]; the event lists come back
/// empty and the seed as given.
pub fn read_record_csv<R: Read>(reader: R, seed: u64) -> Result<RunRecord> {
    let mut input = csv::Reader::from_reader(reader);
    let header = input.headers()?.clone();
    if header.is_empty() {
        return Err(Error::EmptyFile);
    }
    let ids = header
        .iter()
        .filter_map(|h| h.strip_prefix("pred_"))
        .map(|id| {
            id.parse::<u32>()
                .map_err(|_| Error::RecordMismatch(format!("bad pipeline column `pred_{id}`")))
        })
        .collect::<Result<Vec<u32>>>()?;
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (ts, label, ens) = (find("timestamp")?, find("label")?, find("ensemble")?);
    let pred = ids
        .iter()
        .map(|id| find(&format!("pred_{id}")))
        .collect::<Result<Vec<_>>>()?;
    let conf = ids
        .iter()
        .map(|id| find(&format!("conf_{id}")))
        .collect::<Result<Vec<_>>>()?;
    let alarm = ids
        .iter()
        .map(|id| find(&format!("alarm_{id}")))
        .collect::<Result<Vec<_>>>()?;

    let mut record = RunRecord::new(ids, seed);
    for (i, row) in input.records().enumerate() {
        let row = row?;
        let cell = |c: usize| row.get(c).unwrap_or("");
        let bad = |c: usize| Error::Parse {
            row: i + 1,
            column: header[c].to_string(),
            value: cell(c).to_string(),
        };
        let num = |c: usize| cell(c).parse::<u64>().map_err(|_| bad(c));
        let opt_label = |c: usize| -> Result<Option<Label>> {
            match cell(c) {
                NA => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(c)),
            }
        };
        let mut predictions = Vec::with_capacity(pred.len());
        for (&p, &c) in pred.iter().zip(&conf) {
            predictions.push(match opt_label(p)? {
                None => None,
                Some(l) => Some((l, cell(c).parse::<f64>().map_err(|_| bad(c))?)),
            });
        }
        record.rows.push(RecordRow {
            timestamp: num(ts)?,
            label: cell(label).parse().map_err(|_| bad(label))?,
            ensemble: opt_label(ens)?,
            predictions,
            alarmed: alarm
                .iter()
                .map(|&c| match cell(c) {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(bad(c)),
                })
                .collect::<Result<_>>()?,
        });
    }
    Ok(record)
}
