//! Bug-report datasets: CSV ingestion, chronological ordering and the
//! train/test and train/validation splits.
//!
//! Input files are UTF-8 CSV with at least the columns `issue_id`,
//! `summary`, `description` and `security` (`1` marks a security bug
//! report). Column names are matched case-insensitively; extra columns are
//! ignored unless named as the explicit ordering column.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const COL_ID: &str = "issue_id";
pub const COL_SUMMARY: &str = "summary";
pub const COL_DESCRIPTION: &str = "description";
pub const COL_SECURITY: &str = "security";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "SBR")]
    Sbr,
    #[serde(rename = "NSBR")]
    Nsbr,
}

impl Label {
    pub fn is_sbr(self) -> bool {
        self == Label::Sbr
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Sbr => f.write_str("SBR"),
            Label::Nsbr => f.write_str("NSBR"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BugReport {
    pub id: String,
    /// Summary and description joined by a single space.
    pub text: String,
    pub label: Label,
    /// Chronological position within the owning dataset.
    pub rank: usize,
    /// Raw value of the explicit ordering column, when one was requested at load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_value: Option<String>,
}

impl BugReport {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label, rank: usize) -> Self {
        BugReport {
            id: id.into(),
            text: text.into(),
            label,
            rank,
            order_value: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub sbr: usize,
    pub nsbr: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.sbr + self.nsbr
    }

    pub fn sbr_percent(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            100.0 * self.sbr as f64 / self.total() as f64
        }
    }

    pub fn of<'a>(reports: impl IntoIterator<Item = &'a BugReport>) -> Self {
        let mut counts = ClassCounts::default();
        for r in reports {
            match r.label {
                Label::Sbr => counts.sbr += 1,
                Label::Nsbr => counts.nsbr += 1,
            }
        }
        counts
    }
}

impl std::ops::Add for ClassCounts {
    type Output = ClassCounts;

    fn add(self, rhs: ClassCounts) -> ClassCounts {
        ClassCounts {
            sbr: self.sbr + rhs.sbr,
            nsbr: self.nsbr + rhs.nsbr,
        }
    }
}

/// An ordered, immutable collection of bug reports from one project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    name: String,
    reports: Vec<BugReport>,
}

impl Dataset {
    /// Builds a dataset, checking that ids are unique and ranks strictly increase.
    pub fn new(name: impl Into<String>, reports: Vec<BugReport>) -> Result<Self> {
        let name = name.into();
        let mut seen = HashSet::with_capacity(reports.len());
        for (i, r) in reports.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId {
                    dataset: name,
                    id: r.id.clone(),
                });
            }
            if i > 0 && reports[i - 1].rank >= r.rank {
                return Err(Error::Value {
                    row: i + 1,
                    message: format!("rank {} does not increase over the previous report", r.rank),
                });
            }
        }
        Ok(Dataset { name, reports })
    }

    /// Builds a dataset from reports in their intended order, reassigning
    /// ranks `0..n`.
    pub fn from_ordered(name: impl Into<String>, mut reports: Vec<BugReport>) -> Result<Self> {
        for (rank, r) in reports.iter_mut().enumerate() {
            r.rank = rank;
        }
        Dataset::new(name, reports)
    }

    pub fn empty(name: impl Into<String>) -> Self {
        Dataset {
            name: name.into(),
            reports: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn reports(&self) -> &[BugReport] {
        &self.reports
    }

    pub fn into_reports(self) -> Vec<BugReport> {
        self.reports
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn counts(&self) -> ClassCounts {
        ClassCounts::of(&self.reports)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.reports.iter().map(|r| r.id.as_str())
    }

    pub fn labels(&self) -> Vec<Label> {
        self.reports.iter().map(|r| r.label).collect()
    }

    /// SHA-256 over (id, label, text) of every report in order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for r in &self.reports {
            hasher.update(r.id.as_bytes());
            hasher.update([0u8]);
            hasher.update(r.label.to_string().as_bytes());
            hasher.update([0u8]);
            hasher.update(r.text.as_bytes());
            hasher.update([0xffu8]);
        }
        hex::encode(hasher.finalize())
    }

    /// Keeps the reports for which `keep` returns true, preserving order and ranks.
    pub fn filtered(&self, name: impl Into<String>, mut keep: impl FnMut(&BugReport) -> bool) -> Dataset {
        Dataset {
            name: name.into(),
            reports: self.reports.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }
}

/// Rows dropped during load, kept for the run log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rejected_empty: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Column holding an explicit chronological key, retained on each report.
    pub order_column: Option<String>,
}

pub fn load_dataset(path: impl AsRef<Path>, name: &str) -> Result<Dataset> {
    load_dataset_with(path, name, &LoadOptions::default()).map(|(d, _)| d)
}

pub fn load_dataset_with(
    path: impl AsRef<Path>,
    name: &str,
    options: &LoadOptions,
) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (dataset, report) = read_dataset(file, name, options)?;
    if !report.rejected_empty.is_empty() {
        warn!(
            "{}: skipped {} row(s) with empty summary and description",
            path.display(),
            report.rejected_empty.len()
        );
    }
    info!(
        "loaded {} ({} reports, {} SBR)",
        name,
        dataset.len(),
        dataset.counts().sbr
    );
    Ok((dataset, report))
}

fn column_index(headers: &csv::StringRecord, column: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(column))
        .ok_or_else(|| Error::MissingColumn {
            column: column.to_string(),
        })
}

/// Reads a dataset from any CSV source. Row numbers in errors are 1-based
/// and exclude the header.
pub fn read_dataset<R: Read>(reader: R, name: &str, options: &LoadOptions) -> Result<(Dataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = column_index(&headers, COL_ID)?;
    let summary_col = column_index(&headers, COL_SUMMARY)?;
    let description_col = column_index(&headers, COL_DESCRIPTION)?;
    let security_col = column_index(&headers, COL_SECURITY)?;
    let order_col = match &options.order_column {
        Some(c) => Some(column_index(&headers, c)?),
        None => None,
    };

    let mut report = LoadReport::default();
    let mut reports = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        report.rows_read += 1;
        let field = |c: usize| record.get(c).unwrap_or("");
        let id = field(id_col).trim().to_string();
        if id.is_empty() {
            return Err(Error::Value {
                row,
                message: "empty issue_id".into(),
            });
        }
        let label = match field(security_col).trim() {
            "1" => Label::Sbr,
            "0" => Label::Nsbr,
            other => {
                return Err(Error::Value {
                    row,
                    message: format!("security must be 0 or 1, got `{other}`"),
                })
            }
        };
        let summary = field(summary_col);
        let description = field(description_col);
        if summary.trim().is_empty() && description.trim().is_empty() {
            report.rejected_empty.push(row);
            continue;
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId {
                dataset: name.to_string(),
                id,
            });
        }
        let rank = reports.len();
        reports.push(BugReport {
            id,
            text: format!("{summary} {description}"),
            label,
            rank,
            order_value: order_col.map(|c| field(c).trim().to_string()),
        });
    }
    Ok((Dataset::new(name, reports)?, report))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum OrderKey {
    /// Ascending issue id: numeric when every id is an unsigned integer,
    /// lexicographic otherwise.
    #[default]
    IdAscending,
    /// Numeric value of the column captured at load time.
    ExplicitColumn,
}

/// Stable chronological sort; ranks are reassigned `0..n`.
pub fn sort_chronological(d: &Dataset, key: &OrderKey) -> Result<Dataset> {
    let mut reports = d.reports.clone();
    match key {
        OrderKey::IdAscending => {
            let numeric: Option<Vec<u64>> = reports.iter().map(|r| r.id.parse::<u64>().ok()).collect();
            match numeric {
                Some(keys) => {
                    let mut keyed: Vec<(u64, BugReport)> = keys.into_iter().zip(reports).collect();
                    keyed.sort_by_key(|(k, _)| *k);
                    reports = keyed.into_iter().map(|(_, r)| r).collect();
                }
                None => reports.sort_by(|a, b| a.id.cmp(&b.id)),
            }
        }
        OrderKey::ExplicitColumn => {
            let mut keyed = Vec::with_capacity(reports.len());
            for (i, r) in reports.into_iter().enumerate() {
                let raw = r.order_value.as_deref().ok_or_else(|| Error::Value {
                    row: i + 1,
                    message: "no explicit order value was loaded".into(),
                })?;
                let k: f64 = raw.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::Value {
                    row: i + 1,
                    message: format!("unparseable order key `{raw}`"),
                })?;
                keyed.push((k, r));
            }
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
            reports = keyed.into_iter().map(|(_, r)| r).collect();
        }
    }
    Dataset::from_ordered(d.name.clone(), reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    pub validation_fraction: f64,
}

pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

/// Historical first half for training, later half for testing. The train
/// half takes `floor(n/2)` reports.
pub fn split_half(d: &Dataset) -> Result<SplitPair> {
    if d.len() < 2 {
        return Err(Error::Size(format!(
            "dataset `{}` has {} report(s); at least 2 are needed to split",
            d.name,
            d.len()
        )));
    }
    let cut = d.len() / 2;
    Ok(SplitPair {
        train: Dataset {
            name: format!("{}/train", d.name),
            reports: d.reports[..cut].to_vec(),
        },
        test: Dataset {
            name: format!("{}/test", d.name),
            reports: d.reports[cut..].to_vec(),
        },
        validation_fraction: DEFAULT_VALIDATION_FRACTION,
    })
}

#[derive(Debug, Clone)]
pub struct TrainValidation {
    pub train: Dataset,
    pub validation: Dataset,
    /// Whether the partition was stratified by class.
    pub stratified: bool,
}

/// Random train/validation partition with exactly `round(fraction * n)`
/// validation reports. Stratified when each class has at least
/// `1 / fraction` members. Both halves keep chronological order.
pub fn split_train_validation(train: &Dataset, fraction: f64, seed: u64) -> Result<TrainValidation> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction must be in (0,1), got {fraction}")));
    }
    let n = train.len();
    let n_val = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let counts = train.counts();
    let min_members = (1.0 / fraction).ceil() as usize;
    let stratified = counts.sbr >= min_members && counts.nsbr >= min_members;

    let mut chosen: Vec<usize> = if stratified {
        let sbr_idx: Vec<usize> = (0..n).filter(|&i| train.reports[i].label.is_sbr()).collect();
        let nsbr_idx: Vec<usize> = (0..n).filter(|&i| !train.reports[i].label.is_sbr()).collect();
        // Largest-remainder allocation so the per-class quotas sum to n_val.
        let exact_sbr = n_val as f64 * sbr_idx.len() as f64 / n as f64;
        let exact_nsbr = n_val as f64 - exact_sbr;
        let mut q_sbr = exact_sbr.floor() as usize;
        let q_nsbr_floor = exact_nsbr.floor() as usize;
        if q_sbr + q_nsbr_floor < n_val && exact_sbr.fract() >= exact_nsbr.fract() {
            q_sbr += 1;
        }
        let q_nsbr = n_val - q_sbr;
        let mut pick = |mut idx: Vec<usize>, k: usize| {
            idx.shuffle(&mut rng);
            idx.truncate(k);
            idx
        };
        let mut v = pick(sbr_idx, q_sbr);
        v.extend(pick(nsbr_idx, q_nsbr));
        v
    } else {
        info!(
            "{}: class sizes {}/{} too small for stratification; using a plain random validation split",
            train.name, counts.sbr, counts.nsbr
        );
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n_val);
        idx
    };
    chosen.sort_unstable();

    let mut in_val = vec![false; n];
    for &i in &chosen {
        in_val[i] = true;
    }
    let (mut fit, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (i, r) in train.reports.iter().enumerate() {
        if in_val[i] {
            val.push(r.clone());
        } else {
            fit.push(r.clone());
        }
    }
    Ok(TrainValidation {
        train: Dataset {
            name: format!("{}/fit", train.name),
            reports: fit,
        },
        validation: Dataset {
            name: format!("{}/validation", train.name),
            reports: val,
        },
        stratified,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Validation,
    Test,
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitRole::Train => "train",
            SplitRole::Validation => "validation",
            SplitRole::Test => "test",
        })
    }
}

impl std::str::FromStr for SplitRole {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(SplitRole::Train),
            "validation" => Ok(SplitRole::Validation),
            "test" => Ok(SplitRole::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Audit record of which report went where: `issue_id,split` per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitManifest {
    pub entries: Vec<(String, SplitRole)>,
}

impl SplitManifest {
    pub fn from_splits(train: &Dataset, validation: &Dataset, test: &Dataset) -> Self {
        let mut entries = Vec::with_capacity(train.len() + validation.len() + test.len());
        // Train and validation are interleaved back into chronological order.
        let mut fit: Vec<(usize, &BugReport, SplitRole)> = train
            .reports
            .iter()
            .map(|r| (r.rank, r, SplitRole::Train))
            .chain(validation.reports.iter().map(|r| (r.rank, r, SplitRole::Validation)))
            .collect();
        fit.sort_by_key(|(rank, _, _)| *rank);
        entries.extend(fit.into_iter().map(|(_, r, role)| (r.id.clone(), role)));
        entries.extend(test.reports.iter().map(|r| (r.id.clone(), SplitRole::Test)));
        SplitManifest { entries }
    }

    pub fn ids(&self, role: SplitRole) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(move |(_, r)| *r == role).map(|(id, _)| id.as_str())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("issue_id,split\n");
        for (id, role) in &self.entries {
            out.push_str(&csv_field(id));
            out.push(',');
            out.push_str(&role.to_string());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv_string().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let headers = rdr.headers()?.clone();
        let id_col = column_index(&headers, COL_ID)?;
        let split_col = column_index(&headers, "split")?;
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let role = rec
                .get(split_col)
                .unwrap_or("")
                .parse()
                .map_err(|message| Error::Value { row: i + 1, message })?;
            entries.push((rec.get(id_col).unwrap_or("").to_string(), role));
        }
        Ok(SplitManifest { entries })
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv_string().as_bytes()))
    }
}

/// Hash of the ordered test-half ids and labels; equal across every
/// experiment family that evaluates on the same target.
pub fn test_split_hash(test: &Dataset) -> String {
    let mut hasher = Sha256::new();
    for r in &test.reports {
        hasher.update(r.id.as_bytes());
        hasher.update(b"\t");
        hasher.update(r.label.to_string().as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
