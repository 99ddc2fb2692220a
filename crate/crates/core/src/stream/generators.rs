use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ConceptSchedule, FeatureSchema, Label, LabeledInstance};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Boolean rule over categorical attributes, addressed by attribute and level
/// index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Is { attribute: usize, level: usize },
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
}

impl Predicate {
    pub fn is(attribute: usize, level: usize) -> Self {
        Predicate::Is { attribute, level }
    }

    pub fn and(self, other: Predicate) -> Self {
        Predicate::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Predicate) -> Self {
        Predicate::Or(Box::new(self), Box::new(other))
    }

    pub fn eval(&self, features: &[f64]) -> bool {
        match self {
            Predicate::Is { attribute, level } => features[*attribute] as usize == *level,
            Predicate::And(a, b) => a.eval(features) && b.eval(features),
            Predicate::Or(a, b) => a.eval(features) || b.eval(features),
        }
    }

    fn max_attribute(&self) -> usize {
        match self {
            Predicate::Is { attribute, .. } => *attribute,
            Predicate::And(a, b) | Predicate::Or(a, b) => a.max_attribute().max(b.max_attribute()),
        }
    }
}

const SIZE: usize = 0;
const COLOR: usize = 1;
const SHAPE: usize = 2;

/// The four STAGGER concepts.
///
/// The first three are the classic STAGGER rules. The fourth,
/// `color = blue AND shape = square`, is an addition needed for a
/// four-concept cycle; swap it out with [`StaggerStream::with_rules`].
///
/// * a: `size = small AND color = red`
/// * b: `color = green OR shape = circle`
/// * c: `size = medium OR size = large`
/// * d: `color = blue AND shape = square`
pub fn stagger_rules() -> Vec<Predicate> {
    vec![
        Predicate::is(SIZE, 0).and(Predicate::is(COLOR, 0)),
        Predicate::is(COLOR, 1).or(Predicate::is(SHAPE, 0)),
        Predicate::is(SIZE, 1).or(Predicate::is(SIZE, 2)),
        Predicate::is(COLOR, 2).and(Predicate::is(SHAPE, 1)),
    ]
}

/// SEA thresholds for concepts a-d (the values of the original generator).
pub const SEA_THRESHOLDS: [f64; 4] = [8.0, 9.0, 7.0, 9.5];

/// STAGGER stream: three uniform categorical attributes, label given by the
/// active concept rule.
#[derive(Debug, Clone)]
pub struct StaggerStream {
    rules: Vec<Predicate>,
    schedule: ConceptSchedule,
    rng: ChaCha8Rng,
    next: u64,
    n: u64,
}

pub fn generate_stagger(n: u64, schedule: ConceptSchedule, seed: u64) -> Result<StaggerStream> {
    StaggerStream::with_rules(n, schedule, seed, stagger_rules())
}

impl StaggerStream {
    pub fn with_rules(
        n: u64,
        schedule: ConceptSchedule,
        seed: u64,
        rules: Vec<Predicate>,
    ) -> Result<Self> {
        if let Some(&bad) = schedule.concepts.iter().find(|&&c| c >= rules.len()) {
            return Err(Error::Config(format!(
                "schedule references concept {bad}, only {} rules defined",
                rules.len()
            )));
        }
        if rules.iter().any(|r| r.max_attribute() > SHAPE) {
            return Err(Error::Config("STAGGER rules use attributes 0..=2".into()));
        }
        Ok(StaggerStream {
            rules,
            schedule,
            rng: rng::stream(seed, Purpose::Features, 0),
            next: 1,
            n,
        })
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::stagger()
    }

    pub fn rules(&self) -> &[Predicate] {
        &self.rules
    }

    pub fn schedule(&self) -> &ConceptSchedule {
        &self.schedule
    }

    /// Label of `features` under the concept active at `timestamp`.
    pub fn label_at(&self, timestamp: u64, features: &[f64]) -> Label {
        self.rules[self.schedule.concept_at(timestamp)].eval(features) as Label
    }
}

impl Iterator for StaggerStream {
    type Item = LabeledInstance;

    fn next(&mut self) -> Option<LabeledInstance> {
        if self.next > self.n {
            return None;
        }
        let t = self.next;
        self.next += 1;
        let features: Vec<f64> = (0..3).map(|_| self.rng.gen_range(0..3u32) as f64).collect();
        let label = self.label_at(t, &features);
        Some(LabeledInstance::new(t, features, label))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.n + 1 - self.next) as usize;
        (left, Some(left))
    }
}

/// SEA stream: three uniform attributes on [0, 10]; label 1 iff
/// `x1 + x2 <= threshold` of the active concept.
#[derive(Debug, Clone)]
pub struct SeaStream {
    thresholds: Vec<f64>,
    schedule: ConceptSchedule,
    rng: ChaCha8Rng,
    next: u64,
    n: u64,
}

pub fn generate_sea(n: u64, schedule: ConceptSchedule, seed: u64) -> Result<SeaStream> {
    SeaStream::with_thresholds(n, schedule, seed, SEA_THRESHOLDS.to_vec())
}

impl SeaStream {
    pub fn with_thresholds(
        n: u64,
        schedule: ConceptSchedule,
        seed: u64,
        thresholds: Vec<f64>,
    ) -> Result<Self> {
        if let Some(&bad) = schedule.concepts.iter().find(|&&c| c >= thresholds.len()) {
            return Err(Error::Config(format!(
                "schedule references concept {bad}, only {} thresholds defined",
                thresholds.len()
            )));
        }
        Ok(SeaStream {
            thresholds,
            schedule,
            rng: rng::stream(seed, Purpose::Features, 0),
            next: 1,
            n,
        })
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::sea()
    }

    pub fn schedule(&self) -> &ConceptSchedule {
        &self.schedule
    }

    pub fn label_at(&self, timestamp: u64, features: &[f64]) -> Label {
        sea_label(
            features,
            self.thresholds[self.schedule.concept_at(timestamp)],
        )
    }
}

pub(crate) fn sea_label(features: &[f64], threshold: f64) -> Label {
    (features[0] + features[1] <= threshold) as Label
}

impl Iterator for SeaStream {
    type Item = LabeledInstance;

    fn next(&mut self) -> Option<LabeledInstance> {
        if self.next > self.n {
            return None;
        }
        let t = self.next;
        self.next += 1;
        let features: Vec<f64> = (0..3).map(|_| self.rng.gen_range(0.0..=10.0)).collect();
        let label = self.label_at(t, &features);
        Some(LabeledInstance::new(t, features, label))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.n + 1 - self.next) as usize;
        (left, Some(left))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stagger(n: u64, chunk: u64, seed: u64) -> Vec<LabeledInstance> {
        generate_stagger(n, ConceptSchedule::cycling(4, chunk).unwrap(), seed)
            .unwrap()
            .collect()
    }

    #[test]
    fn sea_rule_examples() {
        assert_eq!(sea_label(&[2.0, 3.0, 9.9], 8.0), 1);
        assert_eq!(sea_label(&[9.0, 9.0, 0.1], 8.0), 0);
        assert_eq!(sea_label(&[4.0, 4.0, 0.0], 8.0), 1);
    }

    #[test]
    fn stagger_is_deterministic_per_seed() {
        assert_eq!(stagger(2_000, 500, 11), stagger(2_000, 500, 11));
        assert_ne!(stagger(2_000, 500, 11), stagger(2_000, 500, 12));
    }

    #[test]
    fn stagger_labels_follow_active_rule() {
        // Brute-force re-evaluation of the rule table, written out by hand.
        fn oracle(concept: usize, f: &[f64]) -> u32 {
            let (size, color, shape) = (f[0] as u32, f[1] as u32, f[2] as u32);
            let v = match concept {
                0 => size == 0 && color == 0,
                1 => color == 1 || shape == 0,
                2 => size == 1 || size == 2,
                3 => color == 2 && shape == 1,
                _ => unreachable!(),
            };
            v as u32
        }
        let stream = stagger(100_000, 10_000, 3);
        assert_eq!(stream.len(), 100_000);
        for (i, z) in stream.iter().enumerate() {
            assert_eq!(z.timestamp, i as u64 + 1);
            let concept = ((z.timestamp - 1) / 10_000 % 4) as usize;
            assert_eq!(z.label, oracle(concept, &z.features), "t = {}", z.timestamp);
            FeatureSchema::stagger().check_instance(z).unwrap();
        }
    }

    #[test]
    fn stagger_attribute_draws_are_roughly_uniform() {
        let stream = stagger(30_000, 10_000, 5);
        for attr in 0..3 {
            let mut counts = [0usize; 3];
            for z in &stream {
                counts[z.features[attr] as usize] += 1;
            }
            for c in counts {
                // 10,000 expected, sd ~ 82
                assert!((9_500..=10_500).contains(&c), "{counts:?}");
            }
        }
    }

    #[test]
    fn sea_labels_follow_thresholds_without_cycling() {
        let schedule = ConceptSchedule::sequential(4, 2_500).unwrap();
        let stream: Vec<_> = generate_sea(12_000, schedule, 9).unwrap().collect();
        for z in &stream {
            let segment = ((z.timestamp - 1) / 2_500).min(3) as usize;
            let expected = (z.features[0] + z.features[1] <= SEA_THRESHOLDS[segment]) as u32;
            assert_eq!(z.label, expected);
            FeatureSchema::sea().check_instance(z).unwrap();
        }
    }

    #[test]
    fn schedule_must_match_rules() {
        let schedule = ConceptSchedule::new(vec![0, 4], 10, true).unwrap();
        assert!(generate_stagger(10, schedule.clone(), 1).is_err());
        assert!(generate_sea(10, schedule, 1).is_err());
    }
}
