//! Tokenization and sparse TF-IDF vectors over a capped vocabulary.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BugReport, Dataset};
use crate::error::{Error, Result};

pub const DEFAULT_VOCAB_CAP: usize = 4000;

const STOP_WORDS: &[&str] = &[
    "an", "and", "are", "as", "at", "be", "been", "but", "by", "can", "do", "does", "for", "from", "had", "has",
    "have", "he", "her", "his", "if", "in", "into", "is", "it", "its", "me", "my", "no", "not", "of", "on", "or",
    "our", "she", "so", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "to",
    "too", "was", "we", "were", "what", "when", "where", "which", "while", "who", "will", "with", "would", "you",
    "your",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub remove_stop_words: bool,
}

impl Tokenizer {
    pub fn with_stop_words() -> Self {
        Tokenizer {
            remove_stop_words: true,
        }
    }

    /// Lowercased maximal alphanumeric runs of at least two characters.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        let mut current = String::new();
        let mut len = 0usize;
        let mut flush = |current: &mut String, len: &mut usize| {
            if *len >= 2 && !(self.remove_stop_words && STOP_WORDS.contains(&current.as_str())) {
                tokens.push(std::mem::take(current));
            } else {
                current.clear();
            }
            *len = 0;
        };
        for c in text.chars() {
            if c.is_alphanumeric() {
                current.extend(c.to_lowercase());
                len += 1;
            } else if !current.is_empty() {
                flush(&mut current, &mut len);
            }
        }
        if !current.is_empty() {
            flush(&mut current, &mut len);
        }
        tokens
    }
}

/// Default tokenization (no stop-word removal).
pub fn tokenize(text: &str) -> Vec<String> {
    Tokenizer::default().tokenize(text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, u32>,
    document_frequency: Vec<usize>,
    n_docs: usize,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn column(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn document_frequency(&self, column: u32) -> usize {
        self.document_frequency[column as usize]
    }

    /// Number of documents the vocabulary was built from.
    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (t, df) in self.terms.iter().zip(&self.document_frequency) {
            writeln!(w, "{t}\t{df}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Document frequency of every token over `reports`.
pub(crate) fn document_frequencies<'a>(
    tokenizer: &Tokenizer,
    reports: impl IntoIterator<Item = &'a BugReport>,
) -> HashMap<String, usize> {
    let mut df: HashMap<String, usize> = HashMap::new();
    for r in reports {
        let unique: HashSet<String> = tokenizer.tokenize(&r.text).into_iter().collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    df
}

/// Top-`cap` terms by document frequency, ties broken lexicographically.
pub fn build_vocabulary(train: &Dataset, cap: usize, tokenizer: &Tokenizer) -> Result<Vocabulary> {
    if cap == 0 {
        return Err(Error::Config("vocabulary cap must be at least 1".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyTraining(format!("cannot build a vocabulary from empty `{}`", train.name())));
    }
    let mut ranked: Vec<(String, usize)> = document_frequencies(tokenizer, train.reports()).into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(cap);
    let index = ranked
        .iter()
        .enumerate()
        .map(|(i, (t, _))| (t.clone(), i as u32))
        .collect();
    let (terms, document_frequency) = ranked.into_iter().unzip();
    Ok(Vocabulary {
        terms,
        index,
        document_frequency,
        n_docs: train.len(),
    })
}

/// Sparse vector with strictly increasing columns; absent columns are zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    /// Sorts by column and drops zero weights. Panics on duplicate columns.
    pub fn from_entries(mut entries: Vec<(u32, f64)>) -> Self {
        entries.retain(|&(_, w)| w != 0.0);
        entries.sort_by_key(|&(c, _)| c);
        assert!(entries.windows(2).all(|w| w[0].0 < w[1].0), "duplicate column in feature vector");
        FeatureVector { entries }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        FeatureVector::from_entries(values.iter().enumerate().map(|(c, &v)| (c as u32, v)).collect())
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, column: u32) -> f64 {
        match self.entries.binary_search_by_key(&column, |&(c, _)| c) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }
}

/// `tf * max(0, ln(n_train_docs / (1 + df)))` with raw in-document counts.
pub fn tfidf_vector(report: &BugReport, vocab: &Vocabulary, n_train_docs: usize, tokenizer: &Tokenizer) -> FeatureVector {
    let mut tf: HashMap<u32, usize> = HashMap::new();
    for t in tokenizer.tokenize(&report.text) {
        if let Some(c) = vocab.column(&t) {
            *tf.entry(c).or_default() += 1;
        }
    }
    let entries = tf
        .into_iter()
        .map(|(c, count)| {
            let idf = (n_train_docs as f64 / (1.0 + vocab.document_frequency(c) as f64)).ln().max(0.0);
            (c, count as f64 * idf)
        })
        .collect();
    FeatureVector::from_entries(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub vocab_cap: usize,
    pub tokenizer: Tokenizer,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            vocab_cap: DEFAULT_VOCAB_CAP,
            tokenizer: Tokenizer::default(),
        }
    }
}

/// A vocabulary fitted on one training set, ready to vectorize any report.
#[derive(Debug, Clone)]
pub struct Featurizer {
    tokenizer: Tokenizer,
    vocab: Vocabulary,
}

impl Featurizer {
    pub fn fit(train: &Dataset, cfg: &FeatureConfig) -> Result<Self> {
        Ok(Featurizer {
            tokenizer: cfg.tokenizer,
            vocab: build_vocabulary(train, cfg.vocab_cap, &cfg.tokenizer)?,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn n_features(&self) -> usize {
        self.vocab.len()
    }

    pub fn vector(&self, report: &BugReport) -> FeatureVector {
        tfidf_vector(report, &self.vocab, self.vocab.n_docs(), &self.tokenizer)
    }

    pub fn transform(&self, d: &Dataset) -> Vec<FeatureVector> {
        d.reports().par_iter().map(|r| self.vector(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn corpus(texts: &[&str]) -> Dataset {
        Dataset::from_ordered(
            "c",
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| BugReport::new(i.to_string(), *t, Label::Nsbr, 0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn token_rule() {
        assert_eq!(tokenize("Buffer OVERFLOW in v2 parser!"), ["buffer", "overflow", "in", "v2", "parser"]);
        assert_eq!(
            Tokenizer::with_stop_words().tokenize("Buffer OVERFLOW in v2 parser!"),
            ["buffer", "overflow", "v2", "parser"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("XSS\u{2014}xss"), ["xss", "xss"]);
        assert_eq!(tokenize("a b c-d e"), Vec::<String>::new());
        assert_eq!(tokenize("Ünïcode_TEXT 42"), ["ünïcode", "text", "42"]);
    }

    #[test]
    fn vocabulary_orders_by_df_then_term() {
        let c = corpus(&["aa bb", "bb cc"]);
        let v = build_vocabulary(&c, 2, &Tokenizer::default()).unwrap();
        assert_eq!(v.terms(), ["bb", "aa"]);
        assert_eq!(v.document_frequency(0), 2);
        assert_eq!(v.document_frequency(1), 1);

        let all = build_vocabulary(&c, 100, &Tokenizer::default()).unwrap();
        assert_eq!(all.terms(), ["bb", "aa", "cc"]);
        let one = build_vocabulary(&c, 1, &Tokenizer::default()).unwrap();
        assert_eq!(one.terms(), ["bb"]);
        assert_eq!(one.column("bb"), Some(0));
    }

    #[test]
    fn vocabulary_errors() {
        let tk = Tokenizer::default();
        assert!(matches!(build_vocabulary(&corpus(&[]), 3, &tk), Err(Error::EmptyTraining(_))));
        assert!(matches!(build_vocabulary(&corpus(&["aa"]), 0, &tk), Err(Error::Config(_))));
    }

    #[test]
    fn tfidf_hand_values() {
        let tk = Tokenizer::default();
        let c = corpus(&["overflow overflow heap", "heap crash", "heap ui"]);
        let v = build_vocabulary(&c, 10, &tk).unwrap();
        let x = tfidf_vector(&c.reports()[0], &v, 3, &tk);
        // overflow: df 1, tf 2 -> 2 ln(3/2).
        let col = v.column("overflow").unwrap();
        assert!((x.get(col) - 2.0 * (1.5f64).ln()).abs() < 1e-12);
        assert!((x.get(col) - 0.8109).abs() < 1e-4);
        // heap: df 3 = n -> ln(3/4) < 0, floored to zero and dropped.
        assert_eq!(x.get(v.column("heap").unwrap()), 0.0);
        assert_eq!(x.nnz(), 1);

        let oov = BugReport::new("z", "nothing known here", Label::Nsbr, 0);
        assert_eq!(tfidf_vector(&oov, &v, 3, &tk).nnz(), 0);
    }

    #[test]
    fn feature_vector_lookup() {
        let v = FeatureVector::from_entries(vec![(5, 1.0), (2, 0.5), (9, 0.0)]);
        assert_eq!(v.entries(), &[(2, 0.5), (5, 1.0)]);
        assert_eq!(v.get(5), 1.0);
        assert_eq!(v.get(9), 0.0);
        assert_eq!(v.get(3), 0.0);
    }
}
