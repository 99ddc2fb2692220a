//! Concept-drift detection for data streams with Inductive Conformal
//! Martingales (ICM).
//!
//! A stream of labelled instances is scored by a bagged decision-tree
//! classifier, turned into conformal p-values, and fed to an exchangeability
//! martingale whose betting function is the cautious multi-estimator rule:
//! the martingale only bets once one of several density estimators ("shadow
//! players") has demonstrated a large gain over a recent window. An alarm
//! retrains the classifier on a window anchored backwards in time. Ten such
//! pipelines with staggered training sizes vote on every prediction.
//!
//! Module map:
//!
//! * [`stream`]: schemas, STAGGER / SEA generators, label noise, CSV I/O
//! * [`forest`]: bagged CART trees producing vote-fraction posteriors
//! * [`conformal`]: nonconformity scores and randomized p-values
//! * [`density`]: interpolated histogram, plain histogram and kNN estimators
//! * [`betting`]: the cautious betting function and its shadow martingales
//! * [`martingale`]: the running martingale, alarms and the retrain anchor
//! * [`ensemble`]: the multi-pipeline detector and its run records
//! * [`eval`]: accuracy, subset re-voting and the accuracy Z-test
//! * [`experiment`]: experiment specifications and multi-seed drivers

#![forbid(unsafe_code)]

pub mod betting;
pub mod conformal;
pub mod density;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod forest;
pub mod martingale;
pub mod rng;
pub mod stream;

pub use error::{Error, Result};
pub use stream::{FeatureSchema, Label, LabeledInstance};
