//! FARSEC training-set filtering.
//!
//! Security keywords are mined from the training SBRs by TF-IDF. Each keyword
//! gets a Graham-style probability from how often it appears in SBRs versus
//! NSBRs, and every NSBR is scored by the naive-Bayes combination of the
//! probabilities of the keywords it contains. NSBRs scoring above the
//! threshold look like security reports and are dropped from training.
//!
//! The `farsectwo` variant doubles the NSBR-side frequency, which biases
//! keyword probabilities (and so scores) toward the non-security class.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::corpus::{BugReport, Dataset};
use crate::error::{Error, Result};
use crate::features::{document_frequencies, Tokenizer};

pub const PROB_FLOOR: f64 = 0.01;
pub const PROB_CEIL: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Farsectwo,
}

impl Variant {
    fn nsbr_multiplier(self) -> f64 {
        match self {
            Variant::Plain => 1.0,
            Variant::Farsectwo => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarsecConfig {
    pub keyword_count: usize,
    pub threshold: f64,
    pub variant: Variant,
    pub tokenizer: Tokenizer,
}

impl Default for FarsecConfig {
    fn default() -> Self {
        FarsecConfig {
            keyword_count: 100,
            threshold: 0.75,
            variant: Variant::Farsectwo,
            tokenizer: Tokenizer::default(),
        }
    }
}

impl FarsecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keyword_count == 0 {
            return Err(Error::Config("FARSEC keyword count must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "FARSEC threshold must lie strictly between 0 and 1, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Top-W SBR terms by `(count across SBRs) * ln(N / (1 + df))`, where df is
/// taken over all training documents. Ties break lexicographically.
pub fn extract_keywords(train: &Dataset, cfg: &FarsecConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    if train.counts().sbr == 0 {
        return Err(Error::NoSecurityReports);
    }
    let n = train.len() as f64;
    let df = document_frequencies(&cfg.tokenizer, train.reports());
    let mut sbr_counts: HashMap<String, usize> = HashMap::new();
    for r in train.reports().iter().filter(|r| r.label.is_sbr()) {
        for t in cfg.tokenizer.tokenize(&r.text) {
            *sbr_counts.entry(t).or_default() += 1;
        }
    }
    let mut scored: Vec<(String, f64)> = sbr_counts
        .into_iter()
        .map(|(t, count)| {
            let idf = (n / (1.0 + df[&t] as f64)).ln();
            (t, count as f64 * idf)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(cfg.keyword_count);
    Ok(scored.into_iter().map(|(t, _)| t).collect())
}

fn graham(sbr_with: usize, n_sbr: usize, nsbr_with: usize, n_nsbr: usize, variant: Variant) -> f64 {
    let bad = if n_sbr == 0 { 0.0 } else { sbr_with as f64 / n_sbr as f64 };
    let good = if n_nsbr == 0 {
        0.0
    } else {
        variant.nsbr_multiplier() * nsbr_with as f64 / n_nsbr as f64
    };
    if bad + good == 0.0 {
        return PROB_FLOOR;
    }
    (bad / (bad + good)).clamp(PROB_FLOOR, PROB_CEIL)
}

/// Probability that a report containing `term` is an SBR, from presence
/// counts in `train`, clamped to `[0.01, 0.99]`.
pub fn keyword_probability(term: &str, train: &Dataset, variant: Variant, tokenizer: &Tokenizer) -> f64 {
    let (mut n_sbr, mut n_nsbr, mut sbr_with, mut nsbr_with) = (0, 0, 0, 0);
    for r in train.reports() {
        let has = tokenizer.tokenize(&r.text).iter().any(|t| t == term);
        if r.label.is_sbr() {
            n_sbr += 1;
            sbr_with += has as usize;
        } else {
            n_nsbr += 1;
            nsbr_with += has as usize;
        }
    }
    graham(sbr_with, n_sbr, nsbr_with, n_nsbr, variant)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordTable {
    /// Keywords in extraction order with their probabilities.
    entries: Vec<(String, f64)>,
    lookup: HashMap<String, usize>,
}

impl KeywordTable {
    pub fn from_entries(entries: Vec<(String, f64)>) -> Self {
        let entries: Vec<(String, f64)> = entries
            .into_iter()
            .map(|(t, p)| (t, p.clamp(PROB_FLOOR, PROB_CEIL)))
            .collect();
        let lookup = entries.iter().enumerate().map(|(i, (t, _))| (t.clone(), i)).collect();
        KeywordTable { entries, lookup }
    }

    /// Extracts keywords from `train` and assigns each its probability.
    pub fn build(train: &Dataset, cfg: &FarsecConfig) -> Result<Self> {
        let keywords = extract_keywords(train, cfg)?;
        let index: HashMap<&str, usize> = keywords.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
        let mut sbr_with = vec![0usize; keywords.len()];
        let mut nsbr_with = vec![0usize; keywords.len()];
        let counts = train.counts();
        for r in train.reports() {
            let present: HashSet<usize> = cfg
                .tokenizer
                .tokenize(&r.text)
                .iter()
                .filter_map(|t| index.get(t.as_str()).copied())
                .collect();
            let target = if r.label.is_sbr() { &mut sbr_with } else { &mut nsbr_with };
            for k in present {
                target[k] += 1;
            }
        }
        let entries = keywords
            .iter()
            .enumerate()
            .map(|(i, k)| {
                (
                    k.clone(),
                    graham(sbr_with[i], counts.sbr, nsbr_with[i], counts.nsbr, cfg.variant),
                )
            })
            .collect();
        Ok(KeywordTable::from_entries(entries))
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probability(&self, keyword: &str) -> Option<f64> {
        self.lookup.get(keyword).map(|&i| self.entries[i].1)
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (k, p) in &self.entries {
            writeln!(w, "{k}\t{p}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Graham combination over the keywords present in the report's token set;
/// zero when none are present. Computed in log space so a hundred factors
/// cannot underflow.
pub fn score_report(report: &BugReport, table: &KeywordTable, tokenizer: &Tokenizer) -> f64 {
    let mut seen = HashSet::new();
    let mut log_p = 0.0;
    let mut log_q = 0.0;
    for t in tokenizer.tokenize(&report.text) {
        if let Some(&i) = table.lookup.get(&t) {
            if seen.insert(i) {
                let p = table.entries[i].1;
                log_p += p.ln();
                log_q += (1.0 - p).ln();
            }
        }
    }
    if seen.is_empty() {
        return 0.0;
    }
    // prod p / (prod p + prod (1-p)) = 1 / (1 + exp(log_q - log_p))
    1.0 / (1.0 + (log_q - log_p).exp())
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub dataset: Dataset,
    pub table: KeywordTable,
    pub removed_ids: Vec<String>,
}

/// Drops NSBRs scoring strictly above the threshold. SBRs and order are kept.
pub fn filter_nsbrs(train: &Dataset, cfg: &FarsecConfig) -> Result<FilterOutcome> {
    let table = KeywordTable::build(train, cfg)?;
    Ok(filter_with_table(train, &table, cfg))
}

/// Filtering against a prebuilt table, e.g. to sweep thresholds.
pub fn filter_with_table(train: &Dataset, table: &KeywordTable, cfg: &FarsecConfig) -> FilterOutcome {
    let mut removed_ids = Vec::new();
    let dataset = train.filtered(format!("{}/farsec", train.name()), |r| {
        if r.label.is_sbr() {
            return true;
        }
        let drop = score_report(r, table, &cfg.tokenizer) > cfg.threshold;
        if drop {
            removed_ids.push(r.id.clone());
        }
        !drop
    });
    info!(
        "FARSEC on {}: {} keyword(s), removed {} of {} NSBRs",
        train.name(),
        table.len(),
        removed_ids.len(),
        train.counts().nsbr
    );
    FilterOutcome {
        dataset,
        table: table.clone(),
        removed_ids,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn ds(rows: &[(&str, bool)]) -> Dataset {
        Dataset::from_ordered(
            "f",
            rows.iter()
                .enumerate()
                .map(|(i, (t, s))| BugReport::new(i.to_string(), *t, if *s { Label::Sbr } else { Label::Nsbr }, 0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = FarsecConfig::default();
        assert!(c.validate().is_ok());
        c.keyword_count = 0;
        assert!(c.validate().is_err());
        c.keyword_count = 5;
        for t in [0.0, 1.0, 1.5] {
            c.threshold = t;
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn keywords_require_sbrs() {
        let d = ds(&[("ui glitch", false)]);
        assert!(matches!(extract_keywords(&d, &FarsecConfig::default()), Err(Error::NoSecurityReports)));
    }

    #[test]
    fn single_sbr_terms_all_qualify() {
        let d = ds(&[("sql injection", true), ("button colour", false), ("layout bug", false)]);
        let mut k = extract_keywords(&d, &FarsecConfig::default()).unwrap();
        k.sort();
        assert_eq!(k, ["injection", "sql"]);
    }

    #[test]
    fn top_keyword_by_sbr_tfidf() {
        // N = 5. overflow: SBR count 3, df 2 -> 3 ln(5/3) = 1.532;
        // crash: SBR count 2, df 4 -> 2 ln(5/5) = 0; heap: 1 * ln(5/2) = 0.916.
        let d = ds(&[
            ("overflow overflow crash", true),
            ("overflow heap crash", true),
            ("crash menu", false),
            ("crash dialog", false),
            ("menu dialog", false),
        ]);
        let cfg = FarsecConfig {
            keyword_count: 1,
            ..FarsecConfig::default()
        };
        assert_eq!(extract_keywords(&d, &cfg).unwrap(), ["overflow"]);
        let cfg = FarsecConfig {
            keyword_count: 3,
            ..FarsecConfig::default()
        };
        assert_eq!(extract_keywords(&d, &cfg).unwrap(), ["overflow", "heap", "crash"]);
    }

    #[test]
    fn probability_hand_values() {
        let tk = Tokenizer::default();
        // 10 SBRs, 4 contain "xss"; 100 NSBRs, 2 contain it.
        let mut rows: Vec<(String, bool)> = Vec::new();
        for i in 0..10 {
            rows.push((if i < 4 { "xss bug".into() } else { "bug".into() }, true));
        }
        for i in 0..100 {
            rows.push((if i < 2 { "xss ui".into() } else { "ui".into() }, false));
        }
        let rows: Vec<(&str, bool)> = rows.iter().map(|(t, s)| (t.as_str(), *s)).collect();
        let d = ds(&rows);
        let p = keyword_probability("xss", &d, Variant::Farsectwo, &tk);
        assert!((p - 0.4 / 0.44).abs() < 1e-12);
        assert!((p - 0.9091).abs() < 1e-4);
        let plain = keyword_probability("xss", &d, Variant::Plain, &tk);
        assert!((plain - 0.4 / 0.42).abs() < 1e-12);
        // Only in NSBRs -> floor; only in SBRs -> ceiling; nowhere -> floor.
        assert_eq!(keyword_probability("ui", &d, Variant::Farsectwo, &tk), PROB_FLOOR);
        let sbr_only = ds(&[("xss", true), ("ui", false)]);
        assert_eq!(keyword_probability("xss", &sbr_only, Variant::Farsectwo, &tk), PROB_CEIL);
        assert_eq!(keyword_probability("absent", &sbr_only, Variant::Farsectwo, &tk), PROB_FLOOR);
    }

    #[test]
    fn table_matches_per_term_probability() {
        let tk = Tokenizer::default();
        let d = ds(&[
            ("buffer overflow crash", true),
            ("xss in login form", true),
            ("overflow in layout", false),
            ("crash on start", false),
            ("login slow", false),
        ]);
        let table = KeywordTable::build(&d, &FarsecConfig::default()).unwrap();
        for (k, p) in table.entries() {
            assert_eq!(*p, keyword_probability(k, &d, Variant::Farsectwo, &tk));
        }
    }

    #[test]
    fn score_hand_values() {
        let tk = Tokenizer::default();
        let table = KeywordTable::from_entries(vec![("heap".into(), 0.9), ("overflow".into(), 0.6)]);
        let r = |t: &str| BugReport::new("r", t, Label::Nsbr, 0);
        let s = score_report(&r("heap overflow"), &table, &tk);
        assert!((s - 0.54 / 0.58).abs() < 1e-12);
        assert!((s - 0.9310).abs() < 1e-4);
        assert_eq!(score_report(&r("nothing here"), &table, &tk), 0.0);
        assert!((score_report(&r("heap"), &table, &tk) - 0.9).abs() < 1e-12);
        // Set semantics: repeats do not change the score.
        assert_eq!(score_report(&r("heap heap overflow heap"), &table, &tk), s);
    }

    #[test]
    fn filtering_keeps_sbrs_and_order() {
        // 3 SBRs, 12 NSBRs. farsectwo probabilities: exploit 1/(1+2/12) = 0.857,
        // spray = token = heap = (1/3)/(1/3+2/12) = 0.667.
        let mut rows = vec![
            ("exploit sandbox escape", true),
            ("heap menu", false),
            ("exploit heap spray", true),
        ];
        rows.extend(std::iter::repeat_n(("menu colour", false), 10));
        rows.push(("exploit token leak", true));
        rows.push(("exploit spray token", false));
        let d = ds(&rows);
        let out = filter_nsbrs(&d, &FarsecConfig::default()).unwrap();
        assert_eq!(out.dataset.counts().sbr, 3);
        // score(exploit, spray, token) = 0.381 / (0.381 + 0.0159) = 0.96 > 0.75
        assert_eq!(out.removed_ids, vec!["14".to_string()]);
        // "heap menu" scores 0.667 and stays.
        assert!(out.dataset.ids().any(|id| id == "1"));
        assert!(out.dataset.reports().windows(2).all(|w| w[0].rank < w[1].rank));
        assert_eq!(out.dataset.len() + out.removed_ids.len(), d.len());
    }

    #[test]
    fn nothing_to_filter_without_nsbrs() {
        let d = ds(&[("overflow", true), ("xss", true)]);
        let out = filter_nsbrs(&d, &FarsecConfig::default()).unwrap();
        assert_eq!(out.dataset.reports(), d.reports());
        assert!(out.removed_ids.is_empty());
    }

    #[test]
    fn threshold_above_attainable_score_removes_nothing() {
        // Each NSBR hits at most one keyword, so no score exceeds 0.99.
        let d = ds(&[("overflow", true), ("xss", true), ("overflow menu", false), ("xss menu", false)]);
        let cfg = FarsecConfig {
            threshold: 0.999,
            ..FarsecConfig::default()
        };
        let table = KeywordTable::build(&d, &cfg).unwrap();
        let max = d
            .reports()
            .iter()
            .filter(|r| !r.label.is_sbr())
            .map(|r| score_report(r, &table, &cfg.tokenizer))
            .fold(0.0, f64::max);
        assert!(max <= PROB_CEIL && max < cfg.threshold);
        assert_eq!(filter_nsbrs(&d, &cfg).unwrap().dataset.len(), d.len());
    }
}
