//! The running exchangeability martingale of one pipeline.
//!
//! `S_n = h_1(p_1) * ... * h_n(p_n)` is tracked as `log S_n`. An alarm is
//! raised when `S_n > 1/delta`; by Ville's inequality an exchangeable stream
//! triggers one with probability at most `delta`. After an alarm the new
//! training window starts one step after the last time `S` was below `r`.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::betting::BetDecision;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleConfig {
    pub delta: f64,
    pub r: f64,
    /// Number of most recent p-values the density estimators see; `None`
    /// means all since the last reset.
    pub pvalue_window: Option<usize>,
    /// Upper bound on retained trajectory points.
    pub trajectory_cap: usize,
}

impl Default for MartingaleConfig {
    fn default() -> Self {
        MartingaleConfig {
            delta: 0.01,
            r: 10.0,
            pvalue_window: None,
            trajectory_cap: 50_000,
        }
    }
}

impl MartingaleConfig {
    pub fn new(delta: f64, r: f64) -> Result<Self> {
        let config = MartingaleConfig {
            delta,
            r,
            ..Default::default()
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.r > 1.0 && self.r.is_finite()) {
            return Err(Error::Config(format!("r must exceed 1, got {}", self.r)));
        }
        if self.pvalue_window == Some(0) {
            return Err(Error::Config("p-value window must be at least 1".into()));
        }
        if self.trajectory_cap == 0 {
            return Err(Error::Config("trajectory cap must be at least 1".into()));
        }
        Ok(())
    }

    /// `ln(1 / delta)`.
    pub fn log_threshold(&self) -> f64 {
        (1.0 / self.delta).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub timestamp: u64,
    pub log_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub at: u64,
    pub log_s: f64,
    pub anchor: u64,
}

/// Timestamp one past the last point with `S < r`, or the first point's
/// timestamp when none is below `r`. `None` for an empty trajectory.
pub fn retrain_anchor(trajectory: &[TrajectoryPoint], r: f64) -> Option<u64> {
    let first = trajectory.first()?;
    let log_r = r.ln();
    Some(
        trajectory
            .iter()
            .rev()
            .find(|p| p.log_s < log_r)
            .map_or(first.timestamp, |p| p.timestamp + 1),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleState {
    config: MartingaleConfig,
    log_s: f64,
    /// Suffix of the trajectory that can still matter to the anchor: it
    /// starts at the last point below `r`, bounded by the cap.
    trajectory: VecDeque<TrajectoryPoint>,
}

impl MartingaleState {
    pub fn new(config: MartingaleConfig) -> Result<Self> {
        config.validate()?;
        Ok(MartingaleState {
            config,
            log_s: 0.0,
            trajectory: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &MartingaleConfig {
        &self.config
    }

    pub fn log_s(&self) -> f64 {
        self.log_s
    }

    pub fn value(&self) -> f64 {
        self.log_s.exp()
    }

    pub fn trajectory(&self) -> Vec<TrajectoryPoint> {
        self.trajectory.iter().copied().collect()
    }

    pub fn update(&mut self, timestamp: u64, bet: &BetDecision) -> Result<()> {
        if !(bet.value > 0.0 && bet.value.is_finite()) {
            return Err(Error::NonPositiveBet(bet.value));
        }
        self.log_s += bet.value.ln();
        if self.log_s < self.config.r.ln() {
            self.trajectory.clear();
        }
        self.trajectory.push_back(TrajectoryPoint {
            timestamp,
            log_s: self.log_s,
        });
        if self.trajectory.len() > self.config.trajectory_cap {
            self.trajectory.pop_front();
        }
        Ok(())
    }

    pub fn check_alarm(&self) -> Option<AlarmEvent> {
        if self.log_s <= self.config.log_threshold() {
            return None;
        }
        let last = self.trajectory.back()?;
        let anchor = retrain_anchor(&self.trajectory(), self.config.r)?;
        Some(AlarmEvent {
            at: last.timestamp,
            log_s: self.log_s,
            anchor,
        })
    }

    pub fn reset(&mut self) {
        self.log_s = 0.0;
        self.trajectory.clear();
    }
}

/// Writes `timestamp,log_s` rows.
pub fn write_trajectory_csv<W: Write>(writer: W, points: &[TrajectoryPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for p in points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}
