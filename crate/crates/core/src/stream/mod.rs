//! Stream model: schemas, labelled instances, concept schedules, the STAGGER
//! and SEA generators, label noise and CSV ingestion/export.
//!
//! Categorical feature values are stored as the level index (`0.0`, `1.0`,
//! ...) so that every instance is a flat `Vec<f64>`; the schema says how to
//! read each slot.

mod csv_io;
mod generators;
mod noise;

pub use csv_io::{load_csv, write_csv, CsvStream};
pub use generators::{
    generate_sea, generate_stagger, stagger_rules, Predicate, SeaStream, StaggerStream,
    SEA_THRESHOLDS,
};
pub use noise::{inject_label_noise, LabelNoise, NoiseMode, NoiseSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class identifier. Every dataset shipped here is binary.
pub type Label = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Categorical { levels: Vec<String> },
    Numeric { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
}

impl Attribute {
    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Attribute {
            name: name.to_string(),
            kind: AttributeKind::Categorical {
                levels: levels.iter().map(|l| l.to_string()).collect(),
            },
        }
    }

    pub fn numeric(name: &str, min: f64, max: f64) -> Self {
        Attribute {
            name: name.to_string(),
            kind: AttributeKind::Numeric { min, max },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, AttributeKind::Categorical { .. })
    }

    fn check(&self, value: f64) -> Result<()> {
        match &self.kind {
            AttributeKind::Categorical { levels } => {
                if value.fract() != 0.0 || value < 0.0 || value as usize >= levels.len() {
                    return Err(Error::SchemaMismatch(format!(
                        "`{}` has no level with index {value}",
                        self.name
                    )));
                }
            }
            AttributeKind::Numeric { min, max } => {
                if !(value >= *min && value <= *max) {
                    return Err(Error::SchemaMismatch(format!(
                        "`{}` = {value} outside [{min}, {max}]",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Ordered attribute list plus the class names (class `i` is `classes[i]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    attributes: Vec<Attribute>,
    classes: Vec<String>,
}

impl FeatureSchema {
    pub fn new(attributes: Vec<Attribute>, classes: Vec<String>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Schema("at least one attribute is required".into()));
        }
        if classes.is_empty() {
            return Err(Error::Schema("at least one class is required".into()));
        }
        for attr in &attributes {
            match &attr.kind {
                AttributeKind::Categorical { levels } if levels.is_empty() => {
                    return Err(Error::Schema(format!("`{}` has no levels", attr.name)));
                }
                AttributeKind::Numeric { min, max }
                    if min.is_nan() || max.is_nan() || min >= max =>
                {
                    return Err(Error::Schema(format!(
                        "`{}` has an empty range [{min}, {max}]",
                        attr.name
                    )));
                }
                _ => {}
            }
        }
        Ok(FeatureSchema {
            attributes,
            classes,
        })
    }

    /// Binary classes named `"0"` and `"1"`.
    pub fn binary(attributes: Vec<Attribute>) -> Result<Self> {
        Self::new(attributes, vec!["0".into(), "1".into()])
    }

    /// size, color, shape with three levels each.
    pub fn stagger() -> Self {
        Self::binary(vec![
            Attribute::categorical("size", &["small", "medium", "large"]),
            Attribute::categorical("color", &["red", "green", "blue"]),
            Attribute::categorical("shape", &["circle", "square", "triangle"]),
        ])
        .expect("static schema")
    }

    /// Three numeric attributes on [0, 10].
    pub fn sea() -> Self {
        Self::binary(vec![
            Attribute::numeric("x1", 0.0, 10.0),
            Attribute::numeric("x2", 0.0, 10.0),
            Attribute::numeric("x3", 0.0, 10.0),
        ])
        .expect("static schema")
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.attributes.len() {
            return Err(Error::SchemaMismatch(format!(
                "expected {} features, got {}",
                self.attributes.len(),
                features.len()
            )));
        }
        self.attributes
            .iter()
            .zip(features)
            .try_for_each(|(attr, &v)| attr.check(v))
    }

    pub fn check_instance(&self, instance: &LabeledInstance) -> Result<()> {
        self.check_features(&instance.features)?;
        if instance.label as usize >= self.classes.len() {
            return Err(Error::SchemaMismatch(format!(
                "label {} outside {} classes",
                instance.label,
                self.classes.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    /// 1-based position in the stream.
    pub timestamp: u64,
    pub features: Vec<f64>,
    pub label: Label,
}

impl LabeledInstance {
    pub fn new(timestamp: u64, features: Vec<f64>, label: Label) -> Self {
        LabeledInstance {
            timestamp,
            features,
            label,
        }
    }
}

/// Which concept is active where. Segment `s` (0-based) covers timestamps
/// `s * chunk_size + 1 ..= (s + 1) * chunk_size`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSchedule {
    pub concepts: Vec<usize>,
    pub chunk_size: u64,
    /// Wrap around after the last concept; otherwise the last one persists.
    pub cycle: bool,
}

impl ConceptSchedule {
    pub fn new(concepts: Vec<usize>, chunk_size: u64, cycle: bool) -> Result<Self> {
        if concepts.is_empty() {
            return Err(Error::Config("concept schedule is empty".into()));
        }
        if chunk_size == 0 {
            return Err(Error::Config("chunk size must be at least 1".into()));
        }
        Ok(ConceptSchedule {
            concepts,
            chunk_size,
            cycle,
        })
    }

    /// a -> b -> c -> d -> a -> ...
    pub fn cycling(concept_count: usize, chunk_size: u64) -> Result<Self> {
        Self::new((0..concept_count).collect(), chunk_size, true)
    }

    /// a -> b -> c -> d, then d for the rest of the stream.
    pub fn sequential(concept_count: usize, chunk_size: u64) -> Result<Self> {
        Self::new((0..concept_count).collect(), chunk_size, false)
    }

    pub fn concept_at(&self, timestamp: u64) -> usize {
        let segment = ((timestamp.max(1) - 1) / self.chunk_size) as usize;
        if self.cycle {
            self.concepts[segment % self.concepts.len()]
        } else {
            self.concepts[segment.min(self.concepts.len() - 1)]
        }
    }

    /// Timestamps `t <= n` whose concept differs from that of `t - 1`.
    pub fn drift_points(&self, n: u64) -> Vec<u64> {
        let mut points = Vec::new();
        let mut t = self.chunk_size + 1;
        while t <= n {
            if self.concept_at(t) != self.concept_at(t - 1) {
                points.push(t);
            }
            t += self.chunk_size;
        }
        points
    }
}
