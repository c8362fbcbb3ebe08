//! Experiment orchestration: within-project prediction (optionally with
//! FARSEC filtering), training-set augmentation from other projects, and
//! cross-project prediction.
//!
//! Every family evaluates on the same data: the later half of the target
//! project. Only the training set changes:
//!
//! | family        | training set                                          |
//! |---------------|-------------------------------------------------------|
//! | `wpp`         | target's earlier half                                 |
//! | `wpp_farsec`  | target's earlier half minus FARSEC-flagged NSBRs      |
//! | `augment_sbr` | target's earlier half + all SBRs of each source       |
//! | `augment_all` | target's earlier half + every report of each source   |
//! | `cpp`         | every report of each source; the target is not used   |
//!
//! Source reports keep their ids under a `<source>:` prefix.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    csv_field, sort_chronological, split_half, split_train_validation, test_split_hash, ClassCounts, Dataset,
    OrderKey, SplitManifest, SplitPair, COL_ID,
};
use crate::error::{Error, Result};
use crate::farsec::{filter_nsbrs, FarsecConfig};
use crate::features::{FeatureConfig, Featurizer};
use crate::forest::{classify, splitmix64, train_forest, ForestModel, HyperParams};
use crate::metrics::{compute_metrics, confusion, MetricsReport};
use crate::tune::{optimize, DeConfig, ForestSearchSpace};

pub const TOOL_VERSION: &str = concat!("sbr-core ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Wpp,
    WppFarsec,
    AugmentSbr,
    AugmentAll,
    Cpp,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Wpp,
        Family::WppFarsec,
        Family::AugmentSbr,
        Family::AugmentAll,
        Family::Cpp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Wpp => "wpp",
            Family::WppFarsec => "wpp_farsec",
            Family::AugmentSbr => "augment_sbr",
            Family::AugmentAll => "augment_all",
            Family::Cpp => "cpp",
        }
    }

    fn uses_sources(self) -> bool {
        matches!(self, Family::AugmentSbr | Family::AugmentAll | Family::Cpp)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What augmentation takes from each source project.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    Sbrs,
    AllBrs,
}

impl AugmentMode {
    pub fn family(self) -> Family {
        match self {
            AugmentMode::Sbrs => Family::AugmentSbr,
            AugmentMode::AllBrs => Family::AugmentAll,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    Forest,
    ExternalPredictions { path: PathBuf },
}

impl LearnerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Forest => "forest",
            LearnerKind::ExternalPredictions { .. } => "external",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub family: Family,
    pub target: String,
    pub sources: Vec<String>,
    pub learner: LearnerKind,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn wpp(target: &str, farsec: bool, learner: LearnerKind, seed: u64) -> Self {
        ExperimentSpec {
            family: if farsec { Family::WppFarsec } else { Family::Wpp },
            target: target.to_string(),
            sources: Vec::new(),
            learner,
            seed,
        }
    }

    pub fn augment(target: &str, sources: &[String], mode: AugmentMode, learner: LearnerKind, seed: u64) -> Self {
        ExperimentSpec {
            family: mode.family(),
            target: target.to_string(),
            sources: sources.to_vec(),
            learner,
            seed,
        }
    }

    pub fn cpp(target: &str, sources: &[String], learner: LearnerKind, seed: u64) -> Self {
        ExperimentSpec {
            family: Family::Cpp,
            target: target.to_string(),
            sources: sources.to_vec(),
            learner,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.contains(&self.target) {
            return Err(Error::Config(format!("target `{}` is also listed as a source", self.target)));
        }
        let unique: HashSet<&String> = self.sources.iter().collect();
        if unique.len() != self.sources.len() {
            return Err(Error::Config(format!("duplicate source in {:?}", self.sources)));
        }
        match (self.family.uses_sources(), self.sources.is_empty()) {
            (false, false) => Err(Error::Config(format!("{} takes no source datasets", self.family))),
            (true, true) if self.family == Family::Cpp => Err(Error::Config("cpp needs at least one source".into())),
            _ => Ok(()),
        }
    }

    /// Stable file-name key, e.g. `augment_all__derby__ambari+camel__forest`.
    pub fn key(&self) -> String {
        let mut k = format!("{}__{}", self.family, self.target);
        if !self.sources.is_empty() {
            k.push_str("__");
            k.push_str(&self.sources.join("+"));
        }
        k.push_str("__");
        k.push_str(self.learner.name());
        k
    }
}

impl fmt::Display for ExperimentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.family, self.target)?;
        if !self.sources.is_empty() {
            write!(f, " <- {}", self.sources.join(","))?;
        }
        write!(f, " [{}]", self.learner.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSettings {
    pub enabled: bool,
    pub population: usize,
    pub generations: usize,
    pub mutation_factor: f64,
    pub crossover_rate: f64,
    pub space: ForestSearchSpace,
}

impl Default for TuningSettings {
    fn default() -> Self {
        let de = DeConfig::new(Vec::new(), 0);
        TuningSettings {
            enabled: true,
            population: de.population,
            generations: de.generations,
            mutation_factor: de.mutation_factor,
            crossover_rate: de.crossover_rate,
            space: ForestSearchSpace::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub features: FeatureConfig,
    pub farsec: FarsecConfig,
    pub tuning: TuningSettings,
    pub default_params: HyperParams,
    pub validation_fraction: f64,
    pub decision_threshold: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            features: FeatureConfig::default(),
            farsec: FarsecConfig::default(),
            tuning: TuningSettings::default(),
            default_params: HyperParams::default(),
            validation_fraction: crate::corpus::DEFAULT_VALIDATION_FRACTION,
            decision_threshold: 0.5,
        }
    }
}

impl HarnessConfig {
    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub best_params: HyperParams,
    pub best_fitness: f64,
    pub default_fitness: f64,
    /// Best validation G-measure after initialization and each generation.
    pub history: Vec<f64>,
    pub history_params: Vec<HyperParams>,
    pub evaluations: usize,
    pub rejected: usize,
    pub stratified_validation: bool,
    pub validation_counts: ClassCounts,
}

impl TuningSummary {
    /// One line per generation: generation, best fitness, best params (JSON).
    pub fn log_lines(&self) -> Vec<String> {
        self.history
            .iter()
            .zip(&self.history_params)
            .enumerate()
            .map(|(g, (f, p))| format!("{g}\t{f}\t{}", serde_json::to_string(p).expect("params serialize")))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub train_counts: ClassCounts,
    pub test_counts: ClassCounts,
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuningSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub farsec_removed: Option<usize>,
    pub test_split_hash: String,
    pub config_hash: String,
    pub tool_version: String,
    /// Wall-clock time; kept out of the record so reruns are byte-identical.
    #[serde(skip)]
    pub duration: Duration,
}

/// Fitted model that scores any dataset in the shared feature space.
pub trait Predictor: Send + Sync {
    fn predict(&self, reports: &Dataset) -> Result<Vec<f64>>;

    fn tuning(&self) -> Option<&TuningSummary> {
        None
    }
}

/// Anything that can be trained on a dataset and then score reports.
pub trait Learner: Sync {
    fn name(&self) -> &str;
    fn fit(&self, train: &Dataset, seed: u64) -> Result<Box<dyn Predictor>>;
}

/// Seed for one stage of a run, derived from the experiment seed.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stage))
}

const STAGE_VALIDATION: u64 = 1;
const STAGE_TUNING: u64 = 2;
const STAGE_MODEL: u64 = 3;

/// Random forest on TF-IDF features, tuned by differential evolution on a
/// held-out validation slice of the training set.
#[derive(Debug, Clone)]
pub struct ForestLearner {
    pub config: HarnessConfig,
}

pub struct TrainedForest {
    pub featurizer: Featurizer,
    pub model: ForestModel,
    pub tuning: Option<TuningSummary>,
}

impl Predictor for TrainedForest {
    fn predict(&self, reports: &Dataset) -> Result<Vec<f64>> {
        Ok(self.model.predict_many(&self.featurizer.transform(reports)))
    }

    fn tuning(&self) -> Option<&TuningSummary> {
        self.tuning.as_ref()
    }
}

impl ForestLearner {
    pub fn new(config: HarnessConfig) -> Self {
        ForestLearner { config }
    }

    pub fn fit_forest(&self, train: &Dataset, seed: u64) -> Result<TrainedForest> {
        if train.is_empty() {
            return Err(Error::EmptyTraining(format!("`{}` has no reports", train.name())));
        }
        let cfg = &self.config;
        let model_seed = stage_seed(seed, STAGE_MODEL);
        let tuning = if cfg.tuning.enabled { self.tune(train, seed)? } else { None };
        let params = tuning.as_ref().map_or(cfg.default_params, |t| t.best_params);
        let featurizer = Featurizer::fit(train, &cfg.features)?;
        let xs = featurizer.transform(train);
        let model = train_forest(&xs, &train.labels(), featurizer.n_features(), &params, model_seed)?;
        Ok(TrainedForest {
            featurizer,
            model,
            tuning,
        })
    }

    /// Maximizes validation G-measure. Returns `None` when the training set
    /// is too small to hold out a validation slice.
    fn tune(&self, train: &Dataset, seed: u64) -> Result<Option<TuningSummary>> {
        let cfg = &self.config;
        let split = split_train_validation(train, cfg.validation_fraction, stage_seed(seed, STAGE_VALIDATION))?;
        if split.train.is_empty() || split.validation.is_empty() {
            info!("{}: too small to tune, using default parameters", train.name());
            return Ok(None);
        }
        let featurizer = Featurizer::fit(&split.train, &cfg.features)?;
        let xs = featurizer.transform(&split.train);
        let ys = split.train.labels();
        let val_xs = featurizer.transform(&split.validation);
        let val_ys = split.validation.labels();
        let n_features = featurizer.n_features();
        let model_seed = stage_seed(seed, STAGE_MODEL);
        let threshold = cfg.decision_threshold;

        let space = &cfg.tuning.space;
        let objective = |v: &[f64]| -> f64 {
            let params = space.decode(v);
            match train_forest(&xs, &ys, n_features, &params, model_seed) {
                Ok(model) => {
                    let predicted: Vec<_> = model.predict_many(&val_xs).into_iter().map(|p| classify(p, threshold)).collect();
                    confusion(&predicted, &val_ys).map_or(f64::NAN, |cm| compute_metrics(&cm).g_measure)
                }
                Err(_) => f64::NAN,
            }
        };
        let de = DeConfig {
            population: cfg.tuning.population,
            generations: cfg.tuning.generations,
            mutation_factor: cfg.tuning.mutation_factor,
            crossover_rate: cfg.tuning.crossover_rate,
            bounds: space.bounds(),
            seed: stage_seed(seed, STAGE_TUNING),
        };
        let default_vector = space.encode(&cfg.default_params, n_features);
        let default_fitness = objective(&default_vector);
        let outcome = optimize(objective, &de, std::slice::from_ref(&default_vector))?;
        Ok(Some(TuningSummary {
            best_params: space.decode(&outcome.best),
            best_fitness: outcome.best_fitness,
            default_fitness,
            history_params: outcome.history_best.iter().map(|v| space.decode(v)).collect(),
            history: outcome.history,
            evaluations: outcome.evaluations,
            rejected: outcome.rejected,
            stratified_validation: split.stratified,
            validation_counts: split.validation.counts(),
        }))
    }
}

impl Learner for ForestLearner {
    fn name(&self) -> &str {
        "forest"
    }

    fn fit(&self, train: &Dataset, seed: u64) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(self.fit_forest(train, seed)?))
    }
}

/// Appends each source's SBRs (or all of its reports) to `train`, prefixing
/// source ids with `<source>:`. `target` names the project `train` came from.
pub fn augment(target: &str, train: &Dataset, sources: &[&Dataset], mode: AugmentMode) -> Result<Dataset> {
    let mut names = HashSet::from([target]);
    for s in sources {
        if !names.insert(s.name()) {
            return Err(Error::Config(format!("dataset `{}` appears more than once in augmentation", s.name())));
        }
    }
    let mut reports = train.reports().to_vec();
    for s in sources {
        for r in s.reports() {
            if mode == AugmentMode::AllBrs || r.label.is_sbr() {
                let mut r = r.clone();
                r.id = format!("{}:{}", s.name(), r.id);
                reports.push(r);
            }
        }
    }
    Dataset::from_ordered(format!("{}/train+{}", target, sources.len()), reports)
}

/// Union of complete source datasets, ids prefixed with `<source>:`.
pub fn cpp_training_set(sources: &[&Dataset]) -> Result<Dataset> {
    let mut names = HashSet::new();
    let mut reports = Vec::new();
    for s in sources {
        if !names.insert(s.name()) {
            return Err(Error::Config(format!("dataset `{}` appears more than once", s.name())));
        }
        reports.extend(s.reports().iter().map(|r| {
            let mut r = r.clone();
            r.id = format!("{}:{}", s.name(), r.id);
            r
        }));
    }
    let names: Vec<&str> = sources.iter().map(|s| s.name()).collect();
    Dataset::from_ordered(format!("cpp[{}]", names.join("+")), reports)
}

/// A CPP training configuration: one model per source set, evaluated on
/// every project outside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CppGroup {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
}

fn nonempty_subsets(items: &[String]) -> Vec<Vec<String>> {
    let n = items.len();
    let mut out: Vec<Vec<String>> = (1u64..(1 << n))
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).map(|i| items[i].clone()).collect())
        .collect();
    out.sort_by(|a: &Vec<String>, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

/// Augmentation runs for one mode and learner: every target with every
/// nonempty subset of the other datasets, or only the all-sources endpoint.
pub fn augmentation_specs(
    names: &[String],
    mode: AugmentMode,
    learner: &LearnerKind,
    seed: u64,
    all_subsets: bool,
) -> Vec<ExperimentSpec> {
    let mut specs = Vec::new();
    for target in names {
        let others: Vec<String> = names.iter().filter(|n| *n != target).cloned().collect();
        if others.is_empty() {
            continue;
        }
        let subsets = if all_subsets { nonempty_subsets(&others) } else { vec![others.clone()] };
        for sources in subsets {
            specs.push(ExperimentSpec::augment(target, &sources, mode, learner.clone(), seed));
        }
    }
    specs
}

/// CPP training source sets of size 1..n-1 (or only n-1), each with the
/// projects left out as evaluation targets.
pub fn cpp_groups(names: &[String], all_subsets: bool) -> Vec<CppGroup> {
    let n = names.len();
    nonempty_subsets(names)
        .into_iter()
        .filter(|s| s.len() < n && (all_subsets || s.len() + 1 == n))
        .map(|sources| {
            let targets = names.iter().filter(|t| !sources.contains(t)).cloned().collect();
            CppGroup { sources, targets }
        })
        .collect()
}

pub fn cpp_specs(groups: &[CppGroup], learner: &LearnerKind, seed: u64) -> Vec<ExperimentSpec> {
    groups
        .iter()
        .flat_map(|g| g.targets.iter().map(move |t| ExperimentSpec::cpp(t, &g.sources, learner.clone(), seed)))
        .collect()
}

/// Training and test sets for one experiment, before any learner runs.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub train: Dataset,
    pub test: Dataset,
    pub farsec_removed: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct ScoredRun {
    pub result: ExperimentResult,
    pub test: Dataset,
    pub probabilities: Vec<f64>,
}

/// The loaded project datasets plus the shared configuration.
pub struct Workbench {
    datasets: BTreeMap<String, Dataset>,
    config: HarnessConfig,
}

impl Workbench {
    /// Takes ownership of the datasets and puts each in chronological order.
    pub fn new(datasets: impl IntoIterator<Item = Dataset>, config: HarnessConfig, order: &OrderKey) -> Result<Self> {
        let mut map = BTreeMap::new();
        for d in datasets {
            let name = d.name().to_string();
            let sorted = sort_chronological(&d, order)?;
            if map.insert(name.clone(), sorted).is_some() {
                return Err(Error::Config(format!("dataset `{name}` given twice")));
            }
        }
        Ok(Workbench { datasets: map, config })
    }

    pub fn config(&self) -> &HarnessConfig {
        &self.config
    }

    pub fn names(&self) -> Vec<String> {
        self.datasets.keys().cloned().collect()
    }

    pub fn dataset(&self, name: &str) -> Result<&Dataset> {
        self.datasets.get(name).ok_or_else(|| Error::UnknownDataset(name.to_string()))
    }

    pub fn split(&self, name: &str) -> Result<SplitPair> {
        let mut pair = split_half(self.dataset(name)?)?;
        pair.validation_fraction = self.config.validation_fraction;
        Ok(pair)
    }

    fn sources(&self, names: &[String]) -> Result<Vec<&Dataset>> {
        names.iter().map(|n| self.dataset(n)).collect()
    }

    pub fn prepare(&self, spec: &ExperimentSpec) -> Result<PreparedRun> {
        spec.validate()?;
        let split = self.split(&spec.target)?;
        let sources = self.sources(&spec.sources)?;
        let mut farsec_removed = None;
        let train = match spec.family {
            Family::Wpp => split.train,
            Family::WppFarsec => {
                let out = filter_nsbrs(&split.train, &self.config.farsec)?;
                farsec_removed = Some(out.removed_ids);
                out.dataset
            }
            Family::AugmentSbr => augment(&spec.target, &split.train, &sources, AugmentMode::Sbrs)?,
            Family::AugmentAll => augment(&spec.target, &split.train, &sources, AugmentMode::AllBrs)?,
            Family::Cpp => cpp_training_set(&sources)?,
        };
        Ok(PreparedRun {
            train,
            test: split.test,
            farsec_removed,
        })
    }

    /// Split manifest for a run: training reports are marked train or
    /// validation exactly as the forest learner partitions them.
    pub fn manifest(&self, spec: &ExperimentSpec) -> Result<SplitManifest> {
        let prepared = self.prepare(spec)?;
        let tv = split_train_validation(
            &prepared.train,
            self.config.validation_fraction,
            stage_seed(spec.seed, STAGE_VALIDATION),
        )?;
        Ok(SplitManifest::from_splits(&tv.train, &tv.validation, &prepared.test))
    }

    pub fn forest_learner(&self) -> ForestLearner {
        ForestLearner::new(self.config.clone())
    }

    pub fn run(&self, spec: &ExperimentSpec) -> Result<ExperimentResult> {
        match &spec.learner {
            LearnerKind::Forest => self.run_with(spec, &self.forest_learner()),
            LearnerKind::ExternalPredictions { path } => self.run_external(spec, path),
        }
        .map_err(|e| e.context(spec.to_string()))
    }

    /// Runs `spec` with a caller-supplied learner.
    pub fn run_with(&self, spec: &ExperimentSpec, learner: &dyn Learner) -> Result<ExperimentResult> {
        self.run_scored(spec, learner).map(|s| s.result)
    }

    /// Like [`Workbench::run_with`], also returning the test set and its
    /// SBR probabilities.
    pub fn run_scored(&self, spec: &ExperimentSpec, learner: &dyn Learner) -> Result<ScoredRun> {
        let started = Instant::now();
        let prepared = self.prepare(spec)?;
        let predictor = learner.fit(&prepared.train, spec.seed)?;
        let probabilities = predictor.predict(&prepared.test)?;
        let mut result = self.assemble(spec, &prepared, &probabilities)?;
        result.tuning = predictor.tuning().cloned();
        result.duration = started.elapsed();
        Ok(ScoredRun {
            result,
            test: prepared.test,
            probabilities,
        })
    }

    fn run_external(&self, spec: &ExperimentSpec, path: &Path) -> Result<ExperimentResult> {
        let started = Instant::now();
        let prepared = self.prepare(spec)?;
        let probabilities = read_predictions_for(path, &prepared.test)?;
        let mut result = self.assemble(spec, &prepared, &probabilities)?;
        result.duration = started.elapsed();
        Ok(result)
    }

    /// Scores a predictions file against the target's test half.
    pub fn evaluate_external_predictions(&self, path: impl AsRef<Path>, target: &str) -> Result<ExperimentResult> {
        let spec = ExperimentSpec::wpp(
            target,
            false,
            LearnerKind::ExternalPredictions {
                path: path.as_ref().to_path_buf(),
            },
            0,
        );
        self.run(&spec)
    }

    fn assemble(&self, spec: &ExperimentSpec, prepared: &PreparedRun, probabilities: &[f64]) -> Result<ExperimentResult> {
        let threshold = self.config.decision_threshold;
        let predicted: Vec<_> = probabilities.iter().map(|&p| classify(p, threshold)).collect();
        let cm = confusion(&predicted, &prepared.test.labels())?;
        Ok(ExperimentResult {
            spec: spec.clone(),
            train_counts: prepared.train.counts(),
            test_counts: prepared.test.counts(),
            metrics: compute_metrics(&cm),
            tuning: None,
            farsec_removed: prepared.farsec_removed.as_ref().map(Vec::len),
            test_split_hash: test_split_hash(&prepared.test),
            config_hash: self.config.hash(),
            tool_version: TOOL_VERSION.to_string(),
            duration: Duration::ZERO,
        })
    }

    /// Trains one model on the group's sources and evaluates it on each target.
    pub fn run_cpp_group(&self, group: &CppGroup, learner: &dyn Learner, seed: u64) -> Result<Vec<ExperimentResult>> {
        let started = Instant::now();
        let sources = self.sources(&group.sources)?;
        let train = cpp_training_set(&sources)?;
        let predictor = learner.fit(&train, seed)?;
        let fit_time = started.elapsed();
        group
            .targets
            .iter()
            .map(|target| {
                let t0 = Instant::now();
                let spec = ExperimentSpec::cpp(target, &group.sources, LearnerKind::Forest, seed);
                let prepared = self.prepare(&spec)?;
                let probabilities = predictor.predict(&prepared.test)?;
                let mut r = self.assemble(&spec, &prepared, &probabilities)?;
                r.tuning = predictor.tuning().cloned();
                r.duration = fit_time + t0.elapsed();
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.context(format!("cpp <- {}", group.sources.join(","))))
    }

    /// Runs specs in parallel; results come back in spec order.
    pub fn run_all(&self, specs: &[ExperimentSpec]) -> Result<Vec<ExperimentResult>> {
        specs.par_iter().map(|s| self.run(s)).collect()
    }

    /// Algorithm-style augmentation sweep for one mode with the forest learner.
    pub fn run_augmentation_suite(&self, mode: AugmentMode, seed: u64, all_subsets: bool) -> Result<Vec<ExperimentResult>> {
        if self.datasets.len() < 2 {
            return Err(Error::Config("augmentation needs at least two datasets".into()));
        }
        let specs = augmentation_specs(&self.names(), mode, &LearnerKind::Forest, seed, all_subsets);
        self.run_all(&specs)
    }

    pub fn run_cpp_suite(&self, seed: u64, all_subsets: bool) -> Result<Vec<ExperimentResult>> {
        if self.datasets.len() < 2 {
            return Err(Error::Config("cross-project prediction needs at least two datasets".into()));
        }
        let learner = self.forest_learner();
        let groups = cpp_groups(&self.names(), all_subsets);
        let nested: Vec<Vec<ExperimentResult>> = groups
            .par_iter()
            .map(|g| self.run_cpp_group(g, &learner, seed))
            .collect::<Result<_>>()?;
        Ok(nested.into_iter().flatten().collect())
    }

    /// Reproducibility stanza: seed, config and dataset content hashes.
    pub fn stanza(&self, seed: u64) -> RunStanza {
        RunStanza {
            tool_version: TOOL_VERSION.to_string(),
            seed,
            config_hash: self.config.hash(),
            config: self.config.clone(),
            datasets: self
                .datasets
                .iter()
                .map(|(n, d)| (n.clone(), d.content_hash()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStanza {
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: HarnessConfig,
    pub datasets: BTreeMap<String, String>,
}

pub fn write_predictions(path: impl AsRef<Path>, test: &Dataset, probabilities: &[f64]) -> Result<()> {
    let path = path.as_ref();
    if probabilities.len() != test.len() {
        return Err(Error::Size(format!("{} probabilities for {} reports", probabilities.len(), test.len())));
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    writeln!(w, "issue_id,probability").map_err(io)?;
    for (id, p) in test.ids().zip(probabilities) {
        writeln!(w, "{},{}", csv_field(id), p).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads `issue_id,probability` rows in file order.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(f);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MissingColumn { column: name.into() })
    };
    let (id_col, p_col) = (find(COL_ID)?, find("probability")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(p_col).unwrap_or("").trim();
        let p: f64 = raw
            .parse()
            .ok()
            .filter(|p: &f64| (0.0..=1.0).contains(p))
            .ok_or_else(|| Error::Value {
                row: i + 1,
                message: format!("probability must be a number in [0,1], got `{raw}`"),
            })?;
        out.push((rec.get(id_col).unwrap_or("").trim().to_string(), p));
    }
    Ok(out)
}

/// Probabilities aligned with `test`; the file must cover its ids exactly.
pub fn read_predictions_for(path: impl AsRef<Path>, test: &Dataset) -> Result<Vec<f64>> {
    let rows = read_predictions(path)?;
    let mut by_id: HashMap<&str, f64> = HashMap::with_capacity(rows.len());
    let mut extra = Vec::new();
    let wanted: HashSet<&str> = test.ids().collect();
    for (id, p) in &rows {
        if !wanted.contains(id.as_str()) || by_id.insert(id.as_str(), *p).is_some() {
            extra.push(id.clone());
        }
    }
    let missing: Vec<String> = test.ids().filter(|id| !by_id.contains_key(id)).map(String::from).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::coverage(&missing, &extra));
    }
    Ok(test.ids().map(|id| by_id[id]).collect())
}

/// Appends result records as JSON lines; safe to share between workers.
pub struct ResultWriter {
    file: Mutex<BufWriter<File>>,
    path: PathBuf,
}

impl ResultWriter {
    pub fn append_to(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(ResultWriter {
            file: Mutex::new(BufWriter::new(f)),
            path,
        })
    }

    pub fn write(&self, result: &ExperimentResult) -> Result<()> {
        let line = serde_json::to_string(result)?;
        let mut f = self.file.lock().expect("result writer poisoned");
        writeln!(f, "{line}").and_then(|_| f.flush()).map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ExperimentResult>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Value {
            row: i + 1,
            message: format!("bad result record: {e}"),
        })?);
    }
    Ok(out)
}

pub const AGGREGATE_HEADER: &str = "family,target,sources,learner,seed,train_sbr,train_nsbr,test_sbr,test_nsbr,tp,fp,fn,tn,recall,precision,f1,fpr,g_measure";

/// One row per record; metrics at full precision.
pub fn aggregate_csv(results: &[ExperimentResult]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for r in results {
        let m = &r.metrics;
        let c = &m.counts;
        let row = [
            r.spec.family.to_string(),
            csv_field(&r.spec.target),
            csv_field(&r.spec.sources.join(";")),
            r.spec.learner.name().to_string(),
            r.spec.seed.to_string(),
            r.train_counts.sbr.to_string(),
            r.train_counts.nsbr.to_string(),
            r.test_counts.sbr.to_string(),
            r.test_counts.nsbr.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.tn.to_string(),
            m.recall.to_string(),
            m.precision.to_string(),
            m.f1.to_string(),
            m.fpr.to_string(),
            m.g_measure.to_string(),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
