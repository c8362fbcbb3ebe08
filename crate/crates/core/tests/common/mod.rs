#![allow(dead_code)]

pub mod oracle;

use sbr_core::corpus::{BugReport, ClassCounts, Dataset, Label};
use sbr_core::synthetic::{self, SyntheticSpec};

pub fn report(id: &str, text: &str, sbr: bool) -> BugReport {
    BugReport::new(id, text, if sbr { Label::Sbr } else { Label::Nsbr }, 0)
}

pub fn dataset(name: &str, rows: &[(&str, &str, bool)]) -> Dataset {
    Dataset::from_ordered(name, rows.iter().map(|(i, t, s)| report(i, t, *s)).collect()).unwrap()
}

/// Synthetic dataset whose chronological halves have the given class counts.
pub fn shaped(name: &str, train: (usize, usize), test: (usize, usize), seed: u64) -> Dataset {
    let spec = SyntheticSpec::new(
        name,
        ClassCounts { sbr: train.0, nsbr: train.1 },
        ClassCounts { sbr: test.0, nsbr: test.1 },
    );
    synthetic::generate(&spec, seed)
}

/// Five small projects with distinct class layouts.
pub fn small_projects() -> Vec<Dataset> {
    vec![
        shaped("alpha", (12, 48), (10, 50), 1),
        shaped("beta", (8, 32), (6, 34), 2),
        shaped("gamma", (5, 35), (7, 33), 3),
        shaped("delta", (9, 21), (4, 26), 4),
        shaped("omega", (6, 24), (5, 25), 5),
    ]
}
