use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sbr_core::corpus::ClassCounts;
use sbr_core::synthetic::{generate_rows, write_csv, SyntheticSpec};

fn sbrbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbrbench")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a dataset whose halves have the given class counts, newest row first.
fn corpus(dir: &Path, name: &str, train: (usize, usize), test: (usize, usize)) -> PathBuf {
    let spec = SyntheticSpec::new(
        name,
        ClassCounts { sbr: train.0, nsbr: train.1 },
        ClassCounts { sbr: test.0, nsbr: test.1 },
    );
    let path = dir.join(format!("{name}.csv"));
    write_csv(&generate_rows(&spec, 7), &path, true).unwrap();
    path
}

const QUICK: [&str; 4] = ["--population", "4", "--generations", "2"];

#[test]
fn ingest_prints_class_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let derby = corpus(dir.path(), "derby", (82, 418), (97, 403));
    let o = sbrbench(&["ingest", "--data", derby.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("derby: 1000 reports, 179 SBR (17.9%)"), "{out}");
    assert!(out.contains("derby: train 82 SBR / 418 NSBR, test 97 SBR / 403 NSBR"), "{out}");
}

#[test]
fn wpp_twice_gives_identical_records() {
    let dir = tempfile::tempdir().unwrap();
    let data = format!("small={}", corpus(dir.path(), "small", (20, 80), (15, 85)).display());
    let run = |out: &str| {
        let out = dir.path().join(out);
        let mut args = vec!["wpp", "--target", "small", "--seed", "42", "--data", &data, "--out", out.to_str().unwrap()];
        args.extend(QUICK);
        let o = sbrbench(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).starts_with("wpp small [forest]: recall "));
        (fs::read(out.join("results.jsonl")).unwrap(), out)
    };
    let (a, out_a) = run("a");
    let (b, _) = run("b");
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let stanza = fs::read_to_string(out_a.join("runs.jsonl")).unwrap();
    assert!(stanza.contains("\"seed\":42") && stanza.contains("\"config_hash\""));
    assert!(out_a.join("tuning").join("wpp__small__forest.tsv").is_file());
    assert_eq!(fs::read_to_string(out_a.join("timings.csv")).unwrap().lines().count(), 1);
}

const RECORD: &str = r#"{"spec":{"family":"FAMILY","target":"TARGET","sources":[],"learner":{"kind":"forest"},"seed":1},"train_counts":{"sbr":4,"nsbr":6},"test_counts":{"sbr":TP_FN,"nsbr":FP_TN},"metrics":{"recall":R,"precision":P,"f1":F,"fpr":X,"g_measure":G,"counts":{"tp":TP,"fp":FP,"fn":FN,"tn":TN}},"test_split_hash":"h","config_hash":"c","tool_version":"v"}"#;

fn record(family: &str, target: &str, tp: u64, fp: u64, fn_: u64, tn: u64) -> (String, [f64; 5]) {
    let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (r, p, x) = (div(tp, tp + fn_), div(tp, tp + fp), div(fp, fp + tn));
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    let g = if r + 1.0 - x == 0.0 { 0.0 } else { 2.0 * r * (1.0 - x) / (r + 1.0 - x) };
    let line = RECORD
        .replace("FAMILY", family)
        .replace("TARGET", target)
        .replace("TP_FN", &(tp + fn_).to_string())
        .replace("FP_TN", &(fp + tn).to_string())
        .replace("TP", &tp.to_string())
        .replace("FP", &fp.to_string())
        .replace("FN", &fn_.to_string())
        .replace("TN", &tn.to_string())
        .replace("\"recall\":R", &format!("\"recall\":{r:?}"))
        .replace("\"precision\":P", &format!("\"precision\":{p:?}"))
        .replace("\"f1\":F", &format!("\"f1\":{f:?}"))
        .replace("\"fpr\":X", &format!("\"fpr\":{x:?}"))
        .replace("\"g_measure\":G", &format!("\"g_measure\":{g:?}"));
    (line, [r, p, f, x, g])
}

#[test]
fn report_builds_one_row_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [("wpp", "derby", 3, 1, 2, 94), ("cpp", "camel", 0, 0, 5, 45), ("augment_all", "wicket", 7, 3, 0, 40)];
    let (lines, expected): (Vec<String>, Vec<[f64; 5]>) = cases
        .iter()
        .map(|&(fam, t, tp, fp, fn_, tn)| record(fam, t, tp, fp, fn_, tn))
        .unzip();
    let results = dir.path().join("results.jsonl");
    fs::write(&results, lines.join("\n") + "\n").unwrap();
    let o = sbrbench(&["report", "--results", results.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows.len(), 4);
    let header: Vec<&str> = rows[0].split(',').collect();
    let metric_cols: Vec<usize> = ["recall", "precision", "f1", "fpr", "g_measure"]
        .iter()
        .map(|m| header.iter().position(|h| h == m).unwrap())
        .collect();
    for ((row, want), case) in rows[1..].iter().zip(&expected).zip(&cases) {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), header.len());
        assert_eq!((cells[0], cells[1]), (case.0, case.1));
        for (c, w) in metric_cols.iter().zip(want) {
            let got: f64 = cells[*c].parse().unwrap();
            assert!((got - w).abs() < 1e-12, "{row}");
        }
    }
}

#[test]
fn exported_predictions_evaluate_externally() {
    let dir = tempfile::tempdir().unwrap();
    let data = format!("p={}", corpus(dir.path(), "p", (15, 60), (12, 63)).display());
    let out = dir.path().join("out");
    let mut args = vec!["wpp", "--target", "p", "--data", &data, "--out", out.to_str().unwrap(), "--export-predictions"];
    args.extend(QUICK);
    let o = sbrbench(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let forest_line = stdout(&o);
    let preds = out.join("predictions").join("wpp__p__forest.csv");
    assert!(fs::read_to_string(&preds).unwrap().starts_with("issue_id,probability\n"));
    let o = sbrbench(&["eval-external", "--target", "p", "--predictions", preds.to_str().unwrap(), "--data", &data, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = |s: &str| s.split_once(": ").unwrap().1.to_string();
    assert_eq!(metrics(&stdout(&o)), metrics(&forest_line));
}

#[test]
fn manifest_lists_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = format!("m={}", corpus(dir.path(), "m", (10, 40), (10, 40)).display());
    let path = dir.path().join("manifest.csv");
    let o = sbrbench(&["manifest", "--target", "m", "--data", &data, "--output", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "issue_id,split");
    assert_eq!(lines.len(), 101);
    let count = |role: &str| lines.iter().filter(|l| l.ends_with(&format!(",{role}"))).count();
    assert_eq!((count("train"), count("validation"), count("test")), (45, 5, 50));
}

#[test]
fn recipe_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let csv = corpus(dir.path(), "r", (10, 40), (10, 40));
    let recipe = dir.path().join("recipe.cfg");
    fs::write(&recipe, format!("# quick\ndata.r = {}\ntune = false\nseed = 5\n", csv.display())).unwrap();
    let out = dir.path().join("out");
    let o = sbrbench(&["farsec-wpp", "--target", "r", "--config", recipe.to_str().unwrap(), "--seed", "6", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let record = fs::read_to_string(out.join("results.jsonl")).unwrap();
    assert!(record.contains("\"seed\":6"));
    assert!(!record.contains("\"tuning\""));
    assert!(stdout(&o).contains("farsec removed"));
}

#[test]
fn usage_errors_exit_with_two() {
    let o = sbrbench(&["wpp", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(sbrbench(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sbrbench(&["augment", "--target", "x", "--mode", "some"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_one_and_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "issue_id,summary,description,security\n1,a b,c d,2\n").unwrap();
    let o = sbrbench(&["ingest", "--data", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("row 1"), "{err}");

    let o = sbrbench(&["ingest", "--data", "x=/no/such/file.csv"]);
    assert_eq!(o.status.code(), Some(1));
    let o = sbrbench(&["wpp", "--target", "absent", "--data", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn synthesize_writes_requested_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let o = sbrbench(&["synthesize", "--layout", "3,7,2,8", "--output", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = sbrbench(&["ingest", "--data", path.to_str().unwrap()]);
    assert!(stdout(&o).contains("s: 20 reports, 5 SBR (25.0%)"), "{}", stdout(&o));
    assert_eq!(sbrbench(&["synthesize", "--layout", "1,2", "--output", "x.csv"]).status.code(), Some(1));
}
