//! Density estimators over p-values on [0, 1].
//!
//! * Interpolated histogram: equal-width bins `B_j = [(j-1)/k, j/k)` (the
//!   last one closed), shrinking `k` by one while any bin is empty. Bin
//!   densities `n_j * k / N` are placed at the centers `(2j - 1) / 2k` and
//!   joined linearly; the function is flat on `[0, c_1]` and `[c_k, 1]`. The
//!   area is exactly one: two half-bin rectangles plus `k - 1` trapezoids.
//! * Plain histogram: the same bins without interpolation.
//! * k-nearest-neighbour: `min(N - 1, k - 1) / (N * L)` where `L` is the
//!   length of the radius-`R_k(x)` window clipped to [0, 1]. This one does
//!   not integrate to one in general.
//!
//! An estimator with no samples is the uniform density.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor for a zero kNN radius (the k-th neighbour coincides with `x`).
pub const KNN_RADIUS_FLOOR: f64 = 1e-9;

fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::OutsideUnitInterval(x))
    }
}

/// 0-based bin of `p` among `bins` equal-width bins.
#[inline]
pub fn bin_index(p: f64, bins: usize) -> usize {
    ((p * bins as f64) as usize).min(bins - 1)
}

#[inline]
fn center(j: usize, bins: usize) -> f64 {
    (2 * j + 1) as f64 / (2 * bins) as f64
}

/// Piecewise-linear interpolation through the bin-center densities.
fn interpolated_value(counts: &[u32], n: f64, x: f64) -> f64 {
    let bins = counts.len();
    let scale = bins as f64 / n;
    let f = |j: usize| counts[j] as f64 * scale;
    if x <= center(0, bins) {
        return f(0);
    }
    if x >= center(bins - 1, bins) {
        return f(bins - 1);
    }
    let pos = x * bins as f64 - 0.5;
    let lo = (pos as usize).min(bins - 2);
    if x == center(lo + 1, bins) {
        return f(lo + 1);
    }
    let t = pos - lo as f64;
    f(lo) + t * (f(lo + 1) - f(lo))
}

fn step_value(counts: &[u32], n: f64, x: f64) -> f64 {
    let bins = counts.len();
    counts[bin_index(x, bins)] as f64 * bins as f64 / n
}

/// Fitted interpolated histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolatedHistogram {
    counts: Vec<u32>,
    sample_size: u64,
}

/// Bins `pvalues` into `kappa_initial` bins, removing one bin at a time until
/// none is empty.
pub fn fit_interpolated_histogram(
    pvalues: &[f64],
    kappa_initial: usize,
) -> Result<InterpolatedHistogram> {
    if pvalues.is_empty() {
        return Err(Error::EmptySample);
    }
    if kappa_initial == 0 {
        return Err(Error::Config("bin count must be at least 1".into()));
    }
    for &p in pvalues {
        check_unit(p)?;
    }
    let mut bins = kappa_initial;
    loop {
        let mut counts = vec![0u32; bins];
        for &p in pvalues {
            counts[bin_index(p, bins)] += 1;
        }
        if bins == 1 || counts.iter().all(|&c| c > 0) {
            return Ok(InterpolatedHistogram {
                counts,
                sample_size: pvalues.len() as u64,
            });
        }
        bins -= 1;
    }
}

impl InterpolatedHistogram {
    pub fn kappa(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn sample_size(&self) -> u64 {
        self.sample_size
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.kappa()).map(|j| center(j, self.kappa())).collect()
    }

    /// `n_j * kappa / N` for every bin.
    pub fn center_densities(&self) -> Vec<f64> {
        let scale = self.kappa() as f64 / self.sample_size as f64;
        self.counts.iter().map(|&c| c as f64 * scale).collect()
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        check_unit(x)?;
        Ok(interpolated_value(&self.counts, self.sample_size as f64, x))
    }

    /// Area under the curve from the rectangle and trapezoid geometry.
    pub fn integral(&self) -> f64 {
        let c = self.centers();
        let f = self.center_densities();
        let k = self.kappa();
        let rectangles = c[0] * f[0] + (1.0 - c[k - 1]) * f[k - 1];
        let trapezoids: f64 = (1..k)
            .map(|j| (f[j - 1] + f[j]) / 2.0 * (c[j] - c[j - 1]))
            .sum();
        rectangles + trapezoids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnDensityConfig {
    pub k: usize,
}

impl KnnDensityConfig {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(KnnDensityConfig { k })
    }
}

fn knn_from_radius(n: usize, k: usize, x: f64, radius: f64) -> f64 {
    let r = if radius == 0.0 {
        KNN_RADIUS_FLOOR
    } else {
        radius
    };
    let window = (1.0 - x).min(r) + x.min(r);
    ((n - 1).min(k - 1)) as f64 / (n as f64 * window)
}

/// kNN estimate at `x` by enumerating every distance.
pub fn knn_density(pvalues: &[f64], config: KnnDensityConfig, x: f64) -> Result<f64> {
    if pvalues.is_empty() {
        return Err(Error::EmptySample);
    }
    check_unit(x)?;
    let mut distances: Vec<f64> = pvalues.iter().map(|p| (x - p).abs()).collect();
    distances.sort_by(f64::total_cmp);
    let radius = distances[config.k.min(distances.len()) - 1];
    Ok(knn_from_radius(pvalues.len(), config.k, x, radius))
}

/// kNN estimate over a sorted sample by merging outwards from `x`.
fn knn_sorted(sorted: &[f64], k: usize, x: f64) -> f64 {
    let n = sorted.len();
    let split = sorted.partition_point(|&p| p < x);
    let (mut lo, mut hi) = (split, split);
    let mut radius = 0.0;
    for _ in 0..k.min(n) {
        let left = if lo > 0 {
            x - sorted[lo - 1]
        } else {
            f64::INFINITY
        };
        let right = if hi < n {
            sorted[hi] - x
        } else {
            f64::INFINITY
        };
        if left <= right {
            radius = left;
            lo -= 1;
        } else {
            radius = right;
            hi += 1;
        }
    }
    knn_from_radius(n, k, x, radius)
}

/// Ordered p-values since the last reset, optionally limited to the most
/// recent `window`, with the bookkeeping every estimator reads from: bin
/// counts for every bin count up to `max_bins` and a sorted copy for kNN.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueHistory {
    values: VecDeque<f64>,
    sorted: Option<Vec<f64>>,
    /// `bins[b - 1]` holds the counts for `b` bins.
    bins: Vec<Vec<u32>>,
    empty_bins: Vec<usize>,
    window: Option<usize>,
}

impl PValueHistory {
    pub fn new(max_bins: usize, track_sorted: bool, window: Option<usize>) -> Self {
        PValueHistory {
            values: VecDeque::new(),
            sorted: track_sorted.then(Vec::new),
            bins: (1..=max_bins).map(|b| vec![0; b]).collect(),
            empty_bins: (1..=max_bins).collect(),
            window,
        }
    }

    /// History able to serve every estimator in `specs`.
    pub fn for_estimators(specs: &[EstimatorSpec], window: Option<usize>) -> Self {
        let max_bins = specs.iter().map(|s| s.bins()).max().unwrap_or(0);
        let knn = specs.iter().any(|s| matches!(s, EstimatorSpec::Knn { .. }));
        Self::new(max_bins, knn, window)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    pub fn max_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn push(&mut self, p: f64) {
        debug_assert!((0.0..=1.0).contains(&p));
        if self.window.is_some_and(|w| self.values.len() >= w) {
            if let Some(old) = self.values.pop_front() {
                self.remove(old);
            }
        }
        self.values.push_back(p);
        for (i, counts) in self.bins.iter_mut().enumerate() {
            let slot = &mut counts[bin_index(p, i + 1)];
            if *slot == 0 {
                self.empty_bins[i] -= 1;
            }
            *slot += 1;
        }
        if let Some(sorted) = &mut self.sorted {
            let at = sorted.partition_point(|&q| q <= p);
            sorted.insert(at, p);
        }
    }

    fn remove(&mut self, p: f64) {
        for (i, counts) in self.bins.iter_mut().enumerate() {
            let slot = &mut counts[bin_index(p, i + 1)];
            *slot -= 1;
            if *slot == 0 {
                self.empty_bins[i] += 1;
            }
        }
        if let Some(sorted) = &mut self.sorted {
            let at = sorted.partition_point(|&q| q < p);
            sorted.remove(at);
        }
    }

    pub fn clear(&mut self) {
        self.values.clear();
        if let Some(sorted) = &mut self.sorted {
            sorted.clear();
        }
        for (i, counts) in self.bins.iter_mut().enumerate() {
            counts.iter_mut().for_each(|c| *c = 0);
            self.empty_bins[i] = i + 1;
        }
    }

    /// Counts after the empty-bin reduction starting from `initial` bins.
    pub fn reduced_counts(&self, initial: usize) -> &[u32] {
        assert!(
            initial >= 1 && initial <= self.bins.len(),
            "bin count {initial} not tracked"
        );
        let mut b = initial;
        while b > 1 && self.empty_bins[b - 1] > 0 {
            b -= 1;
        }
        &self.bins[b - 1]
    }

    pub fn interpolated_histogram(&self, kappa_initial: usize) -> Option<InterpolatedHistogram> {
        (!self.is_empty()).then(|| InterpolatedHistogram {
            counts: self.reduced_counts(kappa_initial).to_vec(),
            sample_size: self.len() as u64,
        })
    }

    fn sorted(&self) -> &[f64] {
        self.sorted
            .as_deref()
            .expect("history was built without kNN support")
    }
}

/// One density estimator of the cautious betting function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorSpec {
    InterpolatedHistogram { bins: usize },
    Histogram { bins: usize },
    Knn { k: usize },
}

impl EstimatorSpec {
    fn bins(&self) -> usize {
        match *self {
            EstimatorSpec::InterpolatedHistogram { bins } | EstimatorSpec::Histogram { bins } => {
                bins
            }
            EstimatorSpec::Knn { .. } => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EstimatorSpec::InterpolatedHistogram { bins: 0 }
            | EstimatorSpec::Histogram { bins: 0 } => {
                Err(Error::Config("bin count must be at least 1".into()))
            }
            EstimatorSpec::Knn { k: 0 } => Err(Error::Config("k must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Whether the estimate integrates to one for every sample.
    pub fn is_normalized(&self) -> bool {
        !matches!(self, EstimatorSpec::Knn { .. })
    }

    /// Density at `x` given `history`; the history must track this estimator.
    pub fn density(&self, history: &PValueHistory, x: f64) -> f64 {
        if history.is_empty() {
            return 1.0;
        }
        let n = history.len() as f64;
        match *self {
            EstimatorSpec::InterpolatedHistogram { bins } => {
                interpolated_value(history.reduced_counts(bins), n, x)
            }
            EstimatorSpec::Histogram { bins } => step_value(history.reduced_counts(bins), n, x),
            EstimatorSpec::Knn { k } => knn_sorted(history.sorted(), k, x),
        }
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorSpec::InterpolatedHistogram { bins } => write!(f, "ih{bins}"),
            EstimatorSpec::Histogram { bins } => write!(f, "hist{bins}"),
            EstimatorSpec::Knn { k } => write!(f, "knn{k}"),
        }
    }
}

impl FromStr for EstimatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown estimator `{s}` (ihN, histN, knnN)"));
        let parse = |rest: &str| rest.parse::<usize>().map_err(|_| bad());
        let spec = if let Some(rest) = s.strip_prefix("ih") {
            EstimatorSpec::InterpolatedHistogram { bins: parse(rest)? }
        } else if let Some(rest) = s.strip_prefix("hist") {
            EstimatorSpec::Histogram { bins: parse(rest)? }
        } else if let Some(rest) = s.strip_prefix("knn") {
            EstimatorSpec::Knn { k: parse(rest)? }
        } else {
            return Err(bad());
        };
        spec.validate()?;
        Ok(spec)
    }
}
