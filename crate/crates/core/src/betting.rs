//! The cautious betting function.
//!
//! Every density estimator `j` plays a shadow game: its running product
//! `S1^j_n = f^j_1(p_1) * ... * f^j_n(p_n)` is kept whether or not the real
//! martingale bets. Before the real bet on `p_n` the gain of each shadow over
//! its last `W` values is
//!
//! ```text
//! ratio_j = S1^j_{n-1} / min_{1 <= k <= min(W, n-1)} S1^j_{n-k}
//! ```
//!
//! If no ratio exceeds `epsilon` the real bet is 1 (the martingale stays
//! put); otherwise the estimator with the largest ratio supplies the bet.
//! All products are kept as logarithms.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::density::{EstimatorSpec, PValueHistory};
use crate::error::{Error, Result};

/// Lower bound applied to estimator outputs before taking logarithms.
pub const DENSITY_FLOOR: f64 = 1e-12;

/// Named estimator line-ups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BettingPreset {
    /// One interpolated histogram with 15 bins.
    Ih,
    /// Interpolated histograms with 5, 10 and 15 bins.
    Mih,
    /// `Mih` plus kNN estimators with k = 5, 10, 15.
    Mihnn,
    /// One plain 15-bin histogram.
    Cau,
}

impl BettingPreset {
    pub const ALL: [BettingPreset; 4] = [
        BettingPreset::Ih,
        BettingPreset::Mih,
        BettingPreset::Mihnn,
        BettingPreset::Cau,
    ];

    pub fn estimators(self) -> Vec<EstimatorSpec> {
        use EstimatorSpec::*;
        let ih = |bins| InterpolatedHistogram { bins };
        match self {
            BettingPreset::Ih => vec![ih(15)],
            BettingPreset::Mih => vec![ih(5), ih(10), ih(15)],
            BettingPreset::Mihnn => vec![
                ih(5),
                ih(10),
                ih(15),
                Knn { k: 5 },
                Knn { k: 10 },
                Knn { k: 15 },
            ],
            BettingPreset::Cau => vec![Histogram { bins: 15 }],
        }
    }
}

impl fmt::Display for BettingPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BettingPreset::Ih => "IH",
            BettingPreset::Mih => "MIH",
            BettingPreset::Mihnn => "MIHNN",
            BettingPreset::Cau => "CAU",
        })
    }
}

impl FromStr for BettingPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BettingPreset::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown betting preset `{s}` (IH, MIH, MIHNN, CAU)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CautiousConfig {
    pub epsilon: f64,
    pub window: usize,
    pub estimators: Vec<EstimatorSpec>,
}

impl CautiousConfig {
    pub const DEFAULT_EPSILON: f64 = 100.0;
    pub const DEFAULT_WINDOW: usize = 5000;

    pub fn new(epsilon: f64, window: usize, estimators: Vec<EstimatorSpec>) -> Result<Self> {
        let config = CautiousConfig {
            epsilon,
            window,
            estimators,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn preset(preset: BettingPreset) -> Self {
        CautiousConfig {
            epsilon: Self::DEFAULT_EPSILON,
            window: Self::DEFAULT_WINDOW,
            estimators: preset.estimators(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("betting window must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config(
                "at least one density estimator is required".into(),
            ));
        }
        self.estimators.iter().try_for_each(EstimatorSpec::validate)
    }
}

/// Sliding-window minimum over the last `capacity` pushed values.
#[derive(Debug, Clone, PartialEq)]
struct WindowMin {
    capacity: usize,
    pushed: u64,
    /// `(push index, value)` with strictly increasing values.
    candidates: VecDeque<(u64, f64)>,
}

impl WindowMin {
    fn new(capacity: usize) -> Self {
        WindowMin {
            capacity,
            pushed: 0,
            candidates: VecDeque::new(),
        }
    }

    fn push(&mut self, value: f64) {
        while self.candidates.back().is_some_and(|&(_, v)| v >= value) {
            self.candidates.pop_back();
        }
        self.candidates.push_back((self.pushed, value));
        self.pushed += 1;
        let oldest = self.pushed.saturating_sub(self.capacity as u64);
        while self.candidates.front().is_some_and(|&(i, _)| i < oldest) {
            self.candidates.pop_front();
        }
    }

    fn min(&self) -> Option<f64> {
        self.candidates.front().map(|&(_, v)| v)
    }

    fn len(&self) -> usize {
        (self.pushed as usize).min(self.capacity)
    }

    fn clear(&mut self) {
        self.pushed = 0;
        self.candidates.clear();
    }
}

/// Log-products of the always-betting shadow players.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowMartingale {
    log_s: Vec<f64>,
    windows: Vec<WindowMin>,
}

impl ShadowMartingale {
    pub fn new(estimators: usize, window: usize) -> Self {
        ShadowMartingale {
            log_s: vec![0.0; estimators],
            windows: vec![WindowMin::new(window); estimators],
        }
    }

    pub fn log_values(&self) -> &[f64] {
        &self.log_s
    }

    /// Number of values the next ratio's minimum ranges over.
    pub fn window_len(&self) -> usize {
        self.windows.first().map_or(0, WindowMin::len)
    }

    /// `log ratio_j` for every estimator; zero before the first update.
    pub fn log_ratios(&self) -> Vec<f64> {
        self.log_s
            .iter()
            .zip(&self.windows)
            .map(|(&s, w)| w.min().map_or(0.0, |m| s - m))
            .collect()
    }

    /// Advances every shadow by the log of its (floored) density.
    pub fn advance(&mut self, densities: &[f64]) {
        debug_assert_eq!(densities.len(), self.log_s.len());
        for ((s, w), &f) in self.log_s.iter_mut().zip(&mut self.windows).zip(densities) {
            *s += f.max(DENSITY_FLOOR).ln();
            w.push(*s);
        }
    }

    pub fn reset(&mut self) {
        self.log_s.iter_mut().for_each(|s| *s = 0.0);
        self.windows.iter_mut().for_each(WindowMin::clear);
    }
}

/// Outcome of one cautious bet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetDecision {
    pub value: f64,
    pub active: bool,
    /// 0-based index of the estimator that supplied the bet.
    pub chosen: Option<usize>,
}

impl BetDecision {
    pub const PASS: BetDecision = BetDecision {
        value: 1.0,
        active: false,
        chosen: None,
    };
}

fn densities(config: &CautiousConfig, history: &PValueHistory, x: f64) -> Vec<f64> {
    config
        .estimators
        .iter()
        .map(|e| e.density(history, x))
        .collect()
}

/// Chooses the estimator (if any) from the shadow ratios.
fn choose(config: &CautiousConfig, shadows: &ShadowMartingale) -> Option<usize> {
    let threshold = config.epsilon.ln();
    let mut best: Option<(usize, f64)> = None;
    for (j, r) in shadows.log_ratios().into_iter().enumerate() {
        if r > threshold && best.is_none_or(|(_, b)| r > b) {
            best = Some((j, r));
        }
    }
    best.map(|(j, _)| j)
}

fn decide(chosen: Option<usize>, densities: &[f64]) -> BetDecision {
    match chosen {
        None => BetDecision::PASS,
        Some(m) => BetDecision {
            value: densities[m].max(DENSITY_FLOOR),
            active: true,
            chosen: Some(m),
        },
    }
}

/// The bet on `p_new`, with estimators fitted on `history` (which excludes
/// `p_new`).
pub fn cautious_bet(
    config: &CautiousConfig,
    shadows: &ShadowMartingale,
    history: &PValueHistory,
    p_new: f64,
) -> BetDecision {
    match choose(config, shadows) {
        None => BetDecision::PASS,
        Some(m) => BetDecision {
            value: config.estimators[m]
                .density(history, p_new)
                .max(DENSITY_FLOOR),
            active: true,
            chosen: Some(m),
        },
    }
}

/// Plays `p_new` for every shadow; `history` must not yet contain `p_new`.
pub fn update_shadows(
    config: &CautiousConfig,
    shadows: &mut ShadowMartingale,
    history: &PValueHistory,
    p_new: f64,
) {
    shadows.advance(&densities(config, history, p_new));
}

/// Betting state of one pipeline: shadows plus the p-value history.
#[derive(Debug, Clone, PartialEq)]
pub struct CautiousBetting {
    config: CautiousConfig,
    shadows: ShadowMartingale,
    history: PValueHistory,
}

impl CautiousBetting {
    pub fn new(config: CautiousConfig, pvalue_window: Option<usize>) -> Result<Self> {
        config.validate()?;
        Ok(CautiousBetting {
            shadows: ShadowMartingale::new(config.estimators.len(), config.window),
            history: PValueHistory::for_estimators(&config.estimators, pvalue_window),
            config,
        })
    }

    pub fn config(&self) -> &CautiousConfig {
        &self.config
    }

    pub fn shadows(&self) -> &ShadowMartingale {
        &self.shadows
    }

    pub fn history(&self) -> &PValueHistory {
        &self.history
    }

    /// Bets on `p`, then lets the shadows play it and records it.
    pub fn bet(&mut self, p: f64) -> Result<BetDecision> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutsideUnitInterval(p));
        }
        let f = densities(&self.config, &self.history, p);
        let decision = decide(choose(&self.config, &self.shadows), &f);
        self.shadows.advance(&f);
        self.history.push(p);
        Ok(decision)
    }

    /// The betting function the next p-value will face.
    pub fn betting_function(&self) -> BettingFunction<'_> {
        BettingFunction {
            state: self,
            chosen: choose(&self.config, &self.shadows),
        }
    }

    pub fn reset(&mut self) {
        self.shadows.reset();
        self.history.clear();
    }
}

/// Frozen view of the next bet as a function of the p-value.
#[derive(Debug, Clone, Copy)]
pub struct BettingFunction<'a> {
    state: &'a CautiousBetting,
    chosen: Option<usize>,
}

impl BettingFunction<'_> {
    pub fn chosen(&self) -> Option<usize> {
        self.chosen
    }

    pub fn chosen_estimator(&self) -> Option<EstimatorSpec> {
        self.chosen.map(|m| self.state.config.estimators[m])
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.chosen {
            None => 1.0,
            Some(m) => self.state.config.estimators[m]
                .density(&self.state.history, x)
                .max(DENSITY_FLOOR),
        }
    }

    /// Points where the function may fail to be smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut points = vec![0.0, 1.0];
        match self.chosen_estimator() {
            Some(
                EstimatorSpec::InterpolatedHistogram { bins } | EstimatorSpec::Histogram { bins },
            ) => {
                let k = self.state.history.reduced_counts(bins).len();
                points.extend((1..k).map(|j| j as f64 / k as f64));
                points.extend((0..k).map(|j| (2 * j + 1) as f64 / (2 * k) as f64));
            }
            Some(EstimatorSpec::Knn { .. }) => {
                points.extend(self.state.history.values());
            }
            None => {}
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        points
    }
}
