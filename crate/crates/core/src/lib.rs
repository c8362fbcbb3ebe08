//! Security bug report prediction: corpus handling, TF-IDF features, FARSEC
//! filtering, a random forest with differential-evolution tuning, metrics and
//! an experiment harness for within-project, augmented and cross-project runs.

pub mod corpus;
pub mod error;
pub mod farsec;
pub mod features;
pub mod forest;
pub mod harness;
pub mod metrics;
pub mod synthetic;
pub mod tune;

pub use corpus::{load_dataset, BugReport, ClassCounts, Dataset, Label, OrderKey, SplitManifest};
pub use error::{Error, Result};
pub use farsec::{filter_nsbrs, FarsecConfig};
pub use features::{FeatureConfig, Featurizer};
pub use forest::{train_forest, ForestModel, HyperParams};
pub use harness::{AugmentMode, ExperimentResult, ExperimentSpec, Family, HarnessConfig, LearnerKind, Workbench};
pub use metrics::{compute_metrics, ConfusionMatrix, MetricsReport};
