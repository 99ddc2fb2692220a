//! Nonconformity scores and randomized conformal p-values.
//!
//! The score of an example is minus the classifier's posterior for its true
//! label, so it lies in `[-1, 0]` and larger means stranger. The p-value of
//! the newest score `a` against the history `H` (which contains `a`) is
//!
//! ```text
//! p = (#{h in H : h > a} + u * #{h in H : h = a}) / |H|
//! ```
//!
//! with `u` uniform on (0, 1). Since `a` itself is counted among the ties,
//! `p` is strictly positive.

use std::collections::BTreeMap;

use ordered_float::OrderedFloat;
use rand::distributions::Open01;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forest::Posterior;
use crate::rng::{self, Purpose};
use crate::stream::Label;

pub fn score(posterior: &Posterior, true_label: Label) -> Result<f64> {
    posterior
        .get(true_label)
        .map(|p| -p)
        .ok_or(Error::UnknownLabel {
            label: true_label,
            classes: posterior.probabilities().len(),
        })
}

/// Reference p-value over a plain slice whose last element is the new score.
pub fn pvalue(history: &[f64], u: f64) -> Result<f64> {
    let (&new, _) = history.split_last().ok_or(Error::EmptyHistory)?;
    let greater = history.iter().filter(|&&a| a > new).count();
    let equal = history.iter().filter(|&&a| a == new).count();
    Ok((greater as f64 + u * equal as f64) / history.len() as f64)
}

/// Scores accumulated since the owning pipeline was last (re)trained.
///
/// Keeps the scores in arrival order plus a count per distinct value, so a
/// p-value costs O(distinct values) instead of O(|H|). With vote-fraction
/// posteriors there are at most `tree_count + 1` distinct values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreHistory {
    scores: Vec<f64>,
    counts: BTreeMap<OrderedFloat<f64>, u64>,
}

impl ScoreHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, score: f64) {
        debug_assert!(score.is_finite());
        self.scores.push(score);
        *self.counts.entry(OrderedFloat(score)).or_default() += 1;
    }

    pub fn clear(&mut self) {
        self.scores.clear();
        self.counts.clear();
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// p-value of the most recently pushed score.
    pub fn pvalue(&self, u: f64) -> Result<f64> {
        let &last = self.scores.last().ok_or(Error::EmptyHistory)?;
        let key = OrderedFloat(last);
        let greater: u64 = self
            .counts
            .range((std::ops::Bound::Excluded(key), std::ops::Bound::Unbounded))
            .map(|(_, c)| c)
            .sum();
        let equal = self.counts[&key];
        Ok((greater as f64 + u * equal as f64) / self.scores.len() as f64)
    }
}

/// Seeded source of the tie-breaking uniforms, one per pipeline.
#[derive(Debug, Clone)]
pub struct TieBreaker {
    rng: ChaCha8Rng,
}

impl TieBreaker {
    pub fn new(seed: u64, pipeline: u64) -> Self {
        TieBreaker {
            rng: rng::stream(seed, Purpose::TieBreak, pipeline),
        }
    }

    /// Uniform draw from the open interval (0, 1).
    pub fn draw(&mut self) -> f64 {
        self.rng.sample(Open01)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn score_is_negative_posterior() {
        let p = Posterior::from_votes(&[10, 30]);
        assert_eq!(score(&p, 1).unwrap(), -0.75);
        assert_eq!(score(&Posterior::from_votes(&[0, 40]), 1).unwrap(), -1.0);
        assert_eq!(score(&Posterior::from_votes(&[0, 40]), 0).unwrap(), 0.0);
        assert!(matches!(
            score(&p, 2),
            Err(Error::UnknownLabel {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn pvalue_examples() {
        assert_eq!(pvalue(&[-0.4], 0.3).unwrap(), 0.3);
        assert_eq!(pvalue(&[-0.9, -0.1, -0.5], 0.5).unwrap(), 0.5);
        let same = vec![-1.0; 10];
        assert!((pvalue(&same, 0.2).unwrap() - 0.2).abs() < 1e-15);
        assert!(matches!(pvalue(&[], 0.5), Err(Error::EmptyHistory)));
        assert!(matches!(
            ScoreHistory::new().pvalue(0.5),
            Err(Error::EmptyHistory)
        ));
    }

    #[test]
    fn history_clear_resets_counts() {
        let mut h = ScoreHistory::new();
        h.push(-0.5);
        h.push(-0.25);
        h.clear();
        assert!(h.is_empty());
        h.push(-0.5);
        assert_eq!(h.pvalue(0.5).unwrap(), 0.5);
        assert_eq!(h, {
            let mut fresh = ScoreHistory::new();
            fresh.push(-0.5);
            fresh
        });
    }

    #[test]
    fn tie_breaker_is_open_unit_and_seeded() {
        let mut a = TieBreaker::new(3, 1);
        let mut b = TieBreaker::new(3, 1);
        for _ in 0..10_000 {
            let u = a.draw();
            assert!(u > 0.0 && u < 1.0);
            assert_eq!(u, b.draw());
        }
        assert_ne!(TieBreaker::new(3, 1).draw(), TieBreaker::new(3, 2).draw());
    }

    fn vote_scores() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec((0u32..=40).prop_map(|v| -(v as f64) / 40.0), 1..200)
    }

    proptest! {
        #[test]
        fn incremental_matches_reference(scores in vote_scores(), u in 0.0001f64..0.9999) {
            let mut h = ScoreHistory::new();
            for (i, &s) in scores.iter().enumerate() {
                h.push(s);
                let p = h.pvalue(u).unwrap();
                prop_assert_eq!(p, pvalue(&scores[..=i], u).unwrap());
                prop_assert!(p > 0.0 && p <= 1.0);
            }
        }

        #[test]
        fn permuting_earlier_scores_keeps_pvalue(mut scores in vote_scores(), u in 0.0001f64..0.9999, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let p = pvalue(&scores, u).unwrap();
            let last = scores.len() - 1;
            scores[..last].shuffle(&mut rng::stream(seed, Purpose::TieBreak, 0));
            prop_assert_eq!(p, pvalue(&scores, u).unwrap());
        }
    }
}
