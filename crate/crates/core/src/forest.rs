//! Bagged decision trees ("treebagger").
//!
//! Each tree is a CART classifier grown on a bootstrap resample of the
//! training set: binary splits chosen by Gini impurity, thresholds at the
//! midpoints between sorted unique values of numeric attributes, one-vs-rest
//! level tests on categorical attributes, growth until a node is pure or
//! holds fewer than two samples, no pruning and no feature subsampling. The
//! posterior of a class is the fraction of trees voting for it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::stream::{FeatureSchema, Label, LabeledInstance};

/// Per-class probabilities; sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior(Vec<f64>);

impl Posterior {
    pub fn from_votes(votes: &[u32]) -> Self {
        let total: u32 = votes.iter().sum();
        Posterior(votes.iter().map(|&v| v as f64 / total as f64).collect())
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, label: Label) -> Option<f64> {
        self.0.get(label as usize).copied()
    }

    /// Most probable class; ties go to the smaller class id.
    pub fn argmax(&self) -> Label {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best as Label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTest {
    /// Numeric: go left when `x <= threshold`.
    AtMost(f64),
    /// Categorical: go left when `x == level`.
    Equals(f64),
}

impl SplitTest {
    fn goes_left(self, x: f64) -> bool {
        match self {
            SplitTest::AtMost(t) => x <= t,
            SplitTest::Equals(level) => x == level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        label: Label,
        counts: Vec<u32>,
    },
    Split {
        feature: usize,
        test: SplitTest,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, features: &[f64]) -> Label {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { label, .. } => return *label,
                Node::Split {
                    feature,
                    test,
                    left,
                    right,
                } => {
                    at = if test.goes_left(features[*feature]) {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    fn fit(schema: &FeatureSchema, data: &[LabeledInstance], mut rows: Vec<usize>) -> Self {
        let classes = schema.class_count();
        let mut tree = DecisionTree { nodes: Vec::new() };
        // (node slot, row range); children are placed after their parent.
        tree.nodes.push(Node::Leaf {
            label: 0,
            counts: Vec::new(),
        });
        let mut work = vec![(0usize, 0usize, rows.len())];
        let mut scratch = Vec::new();
        while let Some((slot, lo, hi)) = work.pop() {
            let part = &mut rows[lo..hi];
            let counts = class_counts(data, part, classes);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let split = if pure || part.len() < 2 {
                None
            } else {
                best_split(schema, data, part, classes, &counts, &mut scratch)
            };
            match split {
                None => {
                    tree.nodes[slot] = Node::Leaf {
                        label: majority(&counts),
                        counts,
                    };
                }
                Some((feature, test)) => {
                    let mid = partition(part, |&r| test.goes_left(data[r].features[feature]));
                    let left = tree.nodes.len();
                    tree.nodes.push(Node::Leaf {
                        label: 0,
                        counts: Vec::new(),
                    });
                    tree.nodes.push(Node::Leaf {
                        label: 0,
                        counts: Vec::new(),
                    });
                    tree.nodes[slot] = Node::Split {
                        feature,
                        test,
                        left,
                        right: left + 1,
                    };
                    work.push((left + 1, lo + mid, hi));
                    work.push((left, lo, lo + mid));
                }
            }
        }
        tree
    }
}

fn class_counts(data: &[LabeledInstance], rows: &[usize], classes: usize) -> Vec<u32> {
    let mut counts = vec![0u32; classes];
    for &r in rows {
        counts[data[r].label as usize] += 1;
    }
    counts
}

fn majority(counts: &[u32]) -> Label {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best as Label
}

/// Sum of squared class counts over size; maximizing the children's total is
/// the same as minimizing their weighted Gini impurity.
fn purity(counts: &[u32], n: u32) -> f64 {
    let sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    sq / n as f64
}

fn best_split(
    schema: &FeatureSchema,
    data: &[LabeledInstance],
    rows: &[usize],
    classes: usize,
    total: &[u32],
    scratch: &mut Vec<(f64, Label)>,
) -> Option<(usize, SplitTest)> {
    let n = rows.len() as u32;
    let mut best: Option<(f64, usize, SplitTest)> = None;
    let mut consider = |score: f64, feature: usize, test: SplitTest| {
        if best.is_none_or(|(s, _, _)| score > s) {
            best = Some((score, feature, test));
        }
    };
    let mut left = vec![0u32; classes];
    let mut right = vec![0u32; classes];
    for (feature, attr) in schema.attributes().iter().enumerate() {
        scratch.clear();
        scratch.extend(
            rows.iter()
                .map(|&r| (data[r].features[feature], data[r].label)),
        );
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        if scratch[0].0 == scratch[scratch.len() - 1].0 {
            continue;
        }
        if attr.is_categorical() {
            // Runs of equal values are the levels present at this node.
            let mut i = 0;
            while i < scratch.len() {
                let level = scratch[i].0;
                left.iter_mut().for_each(|c| *c = 0);
                let mut nl = 0;
                while i < scratch.len() && scratch[i].0 == level {
                    left[scratch[i].1 as usize] += 1;
                    nl += 1;
                    i += 1;
                }
                for c in 0..classes {
                    right[c] = total[c] - left[c];
                }
                let score = purity(&left, nl) + purity(&right, n - nl);
                consider(score, feature, SplitTest::Equals(level));
            }
        } else {
            left.iter_mut().for_each(|c| *c = 0);
            right.copy_from_slice(total);
            for i in 0..scratch.len() - 1 {
                let (v, y) = scratch[i];
                left[y as usize] += 1;
                right[y as usize] -= 1;
                let next = scratch[i + 1].0;
                if next == v {
                    continue;
                }
                let nl = i as u32 + 1;
                let score = purity(&left, nl) + purity(&right, n - nl);
                consider(score, feature, SplitTest::AtMost(v + (next - v) / 2.0));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

/// Stable-order-agnostic in-place partition; returns the size of the `true`
/// prefix.
fn partition(rows: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let mut mid = 0;
    for i in 0..rows.len() {
        if pred(&rows[i]) {
            rows.swap(i, mid);
            mid += 1;
        }
    }
    mid
}

/// Bootstrap-aggregated decision trees. Immutable once trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<DecisionTree>,
    schema: FeatureSchema,
    seed: u64,
}

impl ForestModel {
    /// Fits `tree_count` trees, tree `i` on a bootstrap resample drawn from
    /// its own seeded stream.
    pub fn train(
        schema: &FeatureSchema,
        instances: &[LabeledInstance],
        tree_count: usize,
        seed: u64,
    ) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if tree_count == 0 {
            return Err(Error::Config("tree count must be at least 1".into()));
        }
        for z in instances {
            schema.check_instance(z)?;
        }
        let n = instances.len();
        let trees = (0..tree_count)
            .map(|i| {
                let mut rng = rng::stream(seed, Purpose::Bootstrap, i as u64);
                let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                DecisionTree::fit(schema, instances, rows)
            })
            .collect();
        Ok(ForestModel {
            trees,
            schema: schema.clone(),
            seed,
        })
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn votes(&self, features: &[f64]) -> Result<Vec<u32>> {
        self.schema.check_features(features)?;
        Ok(self.votes_unchecked(features))
    }

    pub(crate) fn votes_unchecked(&self, features: &[f64]) -> Vec<u32> {
        let mut votes = vec![0u32; self.schema.class_count()];
        for tree in &self.trees {
            votes[tree.predict(features) as usize] += 1;
        }
        votes
    }

    pub fn predict_posterior(&self, features: &[f64]) -> Result<Posterior> {
        Ok(Posterior::from_votes(&self.votes(features)?))
    }

    pub fn predict_label(&self, features: &[f64]) -> Result<Label> {
        Ok(self.predict_posterior(features)?.argmax())
    }

    /// Debug dump; the layout is not a stable format.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{generate_sea, generate_stagger, Attribute, ConceptSchedule};

    fn stagger(n: u64, seed: u64) -> Vec<LabeledInstance> {
        generate_stagger(n, ConceptSchedule::cycling(4, n).unwrap(), seed)
            .unwrap()
            .collect()
    }

    #[test]
    fn posterior_vote_fractions() {
        let p = Posterior::from_votes(&[10, 30]);
        assert_eq!(p.probabilities(), &[0.25, 0.75]);
        assert_eq!(p.argmax(), 1);
        assert_eq!(Posterior::from_votes(&[20, 20]).argmax(), 0);
        assert_eq!(Posterior::from_votes(&[0, 40]).probabilities(), &[0.0, 1.0]);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let err = ForestModel::train(&FeatureSchema::stagger(), &[], 40, 1).unwrap_err();
        assert!(matches!(err, Error::EmptyTrainingSet));
    }

    #[test]
    fn single_class_gives_certain_posteriors() {
        let data: Vec<_> = stagger(50, 2)
            .into_iter()
            .map(|mut z| {
                z.label = 1;
                z
            })
            .collect();
        let model = ForestModel::train(&FeatureSchema::stagger(), &data, 40, 3).unwrap();
        for z in stagger(30, 9) {
            assert_eq!(
                model
                    .predict_posterior(&z.features)
                    .unwrap()
                    .probabilities(),
                &[0.0, 1.0]
            );
        }
    }

    #[test]
    fn forty_trees_on_stagger() {
        let data = stagger(200, 1);
        let model = ForestModel::train(&FeatureSchema::stagger(), &data, 40, 8).unwrap();
        assert_eq!(model.tree_count(), 40);
        let correct = data
            .iter()
            .filter(|z| model.predict_label(&z.features).unwrap() == z.label)
            .count();
        assert!(correct as f64 / data.len() as f64 >= 0.99);
    }

    #[test]
    fn separable_numeric_training_accuracy() {
        // x1 + x2 <= 8 is separable; seeded SEA concept a without noise.
        let data: Vec<_> = generate_sea(400, ConceptSchedule::sequential(4, 1_000).unwrap(), 5)
            .unwrap()
            .collect();
        let model = ForestModel::train(&FeatureSchema::sea(), &data, 40, 6).unwrap();
        let correct = data
            .iter()
            .filter(|z| model.predict_label(&z.features).unwrap() == z.label)
            .count();
        assert!(correct as f64 / data.len() as f64 >= 0.99, "{correct}");
    }

    #[test]
    fn trees_are_pure_or_unsplittable_at_leaves() {
        let data: Vec<_> = generate_sea(300, ConceptSchedule::sequential(4, 1_000).unwrap(), 2)
            .unwrap()
            .collect();
        let model = ForestModel::train(&FeatureSchema::sea(), &data, 5, 1).unwrap();
        for tree in model.trees() {
            for node in tree.nodes() {
                if let Node::Leaf { counts, .. } = node {
                    assert!(counts.iter().sum::<u32>() > 0);
                }
            }
        }
        // Distinct continuous values: each bootstrap sample is fit perfectly.
        let tree = &model.trees()[0];
        let mut rng = rng::stream(1, Purpose::Bootstrap, 0);
        for _ in 0..data.len() {
            let z = &data[rng.gen_range(0..data.len())];
            assert_eq!(tree.predict(&z.features), z.label);
        }
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let model = ForestModel::train(&FeatureSchema::stagger(), &stagger(20, 1), 3, 1).unwrap();
        assert!(model.predict_posterior(&[0.0, 1.0]).is_err());
        assert!(model.predict_label(&[0.0, 1.0, 7.0]).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let data = stagger(150, 4);
        let a = ForestModel::train(&FeatureSchema::stagger(), &data, 10, 99).unwrap();
        let b = ForestModel::train(&FeatureSchema::stagger(), &data, 10, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.to_json().unwrap().contains("\"trees\""));
    }

    #[test]
    fn identical_features_make_a_leaf() {
        let schema = FeatureSchema::binary(vec![Attribute::numeric("x", 0.0, 1.0)]).unwrap();
        let data = vec![
            LabeledInstance::new(1, vec![0.5], 0),
            LabeledInstance::new(2, vec![0.5], 1),
            LabeledInstance::new(3, vec![0.5], 1),
        ];
        let model = ForestModel::train(&schema, &data, 1, 0).unwrap();
        assert_eq!(model.trees()[0].nodes().len(), 1);
    }
}
