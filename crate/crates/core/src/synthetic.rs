//! Seeded synthetic bug-report corpora with a controllable class layout.
//!
//! Used for fixtures, smoke runs and timing when the real project datasets
//! are not at hand. Security reports draw several terms from a security
//! lexicon; non-security reports mostly use general tracker vocabulary with
//! an occasional security term, so keyword filtering and classifiers have
//! both signal and noise to work with.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{csv_field, BugReport, ClassCounts, Dataset, Label};
use crate::error::{Error, Result};

const SECURITY_TERMS: &[&str] = &[
    "overflow", "exploit", "xss", "injection", "csrf", "sandbox", "escape", "privilege", "escalation", "leak",
    "uaf", "heap", "spoofing", "origin", "bypass", "vulnerability", "attacker", "malicious", "crafted",
    "arbitrary", "execution", "sanitize", "credential", "password", "token", "authentication", "unauthorized",
    "cve", "dos", "corruption", "dangling", "freed", "race", "tamper", "phishing", "cookie", "certificate",
    "ssl", "tls", "encryption", "secret", "permission", "traversal", "deserialization", "clickjacking",
];

const GENERAL_TERMS: &[&str] = &[
    "crash", "page", "button", "dialog", "menu", "layout", "render", "font", "window", "tab", "scroll",
    "toolbar", "click", "load", "slow", "startup", "build", "test", "fails", "error", "exception", "null",
    "pointer", "query", "table", "index", "column", "database", "connection", "timeout", "route", "endpoint",
    "service", "config", "property", "setting", "default", "option", "value", "string", "format", "parse",
    "update", "version", "upgrade", "release", "patch", "component", "model", "view", "form", "field",
    "input", "output", "file", "path", "directory", "log", "message", "warning", "debug", "trace", "stack",
    "thread", "lock", "cache", "memory", "performance", "cpu", "disk", "network", "request", "response",
    "header", "body", "status", "code", "return", "method", "class", "interface", "java", "javascript", "css",
    "html", "image", "icon", "color", "size", "width", "height", "display", "screen", "mouse", "keyboard",
    "shortcut", "focus", "event", "listener", "callback", "handler", "queue", "message", "broker", "camel",
    "wicket", "derby", "ambari", "hadoop", "cluster", "node", "host", "agent", "metrics", "dashboard",
    "widget", "chart", "report", "export", "import", "plugin", "extension", "browser", "chrome", "tabs",
    "bookmark", "history", "download", "print", "preview", "sync", "profile", "user", "account", "login",
    "session", "state", "transaction", "commit", "rollback", "schema", "migration", "driver", "jdbc", "sql",
    "statement", "result", "set", "row", "record", "document", "text", "label", "tooltip", "popup",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub name: String,
    /// Class counts of the chronologically earlier half.
    pub train: ClassCounts,
    /// Class counts of the later half.
    pub test: ClassCounts,
    /// First issue id; ids increase with chronological position.
    pub id_offset: u64,
    /// Probability that a non-security report mentions a security term.
    pub nsbr_security_noise: f64,
}

impl SyntheticSpec {
    pub fn new(name: &str, train: ClassCounts, test: ClassCounts) -> Self {
        SyntheticSpec {
            name: name.to_string(),
            train,
            test,
            id_offset: 1000,
            nsbr_security_noise: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRow {
    pub id: String,
    pub summary: String,
    pub description: String,
    pub label: Label,
}

fn pick<'a>(rng: &mut ChaCha8Rng, terms: &[&'a str]) -> &'a str {
    // Skewed toward the front of the list, roughly Zipf-like.
    let u: f64 = rng.random();
    terms[((u * u) * terms.len() as f64) as usize]
}

fn words(rng: &mut ChaCha8Rng, n_general: usize, n_security: usize) -> Vec<&'static str> {
    let mut w: Vec<&str> = (0..n_general).map(|_| pick(rng, GENERAL_TERMS)).collect();
    w.extend((0..n_security).map(|_| pick(rng, SECURITY_TERMS)));
    w.shuffle(rng);
    w
}

/// Rows in chronological order (ids ascending); each half has exactly the
/// requested class counts, shuffled within the half.
pub fn generate_rows(spec: &SyntheticSpec, seed: u64) -> Vec<SyntheticRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(spec.train.total() + spec.test.total());
    for half in [spec.train, spec.test] {
        let mut part: Vec<Label> = std::iter::repeat_n(Label::Sbr, half.sbr)
            .chain(std::iter::repeat_n(Label::Nsbr, half.nsbr))
            .collect();
        part.shuffle(&mut rng);
        labels.extend(part);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let n_sec = match label {
                Label::Sbr => rng.random_range(2..6),
                Label::Nsbr => usize::from(rng.random::<f64>() < spec.nsbr_security_noise),
            };
            let (n_summary, n_description) = (rng.random_range(2..6), rng.random_range(6..24));
            let summary = words(&mut rng, n_summary, n_sec.min(1)).join(" ");
            let description = words(&mut rng, n_description, n_sec.saturating_sub(1)).join(" ");
            SyntheticRow {
                id: (spec.id_offset + i as u64).to_string(),
                summary,
                description,
                label,
            }
        })
        .collect()
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Dataset {
    let reports = generate_rows(spec, seed)
        .into_iter()
        .enumerate()
        .map(|(rank, r)| BugReport::new(r.id, format!("{} {}", r.summary, r.description), r.label, rank))
        .collect();
    Dataset::new(spec.name.clone(), reports).expect("generated ids are unique and ranked")
}

/// Writes rows in the ingestion CSV layout. `reverse` writes them newest
/// first so chronological sorting is exercised on load.
pub fn write_csv(rows: &[SyntheticRow], path: impl AsRef<Path>, reverse: bool) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    writeln!(w, "issue_id,summary,description,security").map_err(io)?;
    let mut order: Vec<&SyntheticRow> = rows.iter().collect();
    if reverse {
        order.reverse();
    }
    for r in order {
        writeln!(
            w,
            "{},{},{},{}",
            csv_field(&r.id),
            csv_field(&r.summary),
            csv_field(&r.description),
            u8::from(r.label.is_sbr())
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
