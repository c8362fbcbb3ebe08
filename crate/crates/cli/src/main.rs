use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use sbr_core::corpus::{load_dataset_with, split_half, LoadOptions};
use sbr_core::harness::{
    aggregate_csv, augmentation_specs, cpp_groups, read_results, write_predictions, ExperimentResult,
    ResultWriter,
};
use sbr_core::synthetic::{self, SyntheticSpec};
use sbr_core::{AugmentMode, ClassCounts, Dataset, ExperimentSpec, LearnerKind, OrderKey, Workbench};

mod recipe;

use recipe::Recipe;

#[derive(Parser, Debug)]
#[command(name = "sbrbench", version, about = "Security bug report prediction experiments")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct CommonArgs {
    /// Dataset as `name=path`, or a bare path named after its file stem. Repeatable.
    #[arg(long = "data", value_name = "NAME=PATH", global = true)]
    data: Vec<String>,
    /// Flat `key=value` recipe file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default 1).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory for result records and side files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// FARSEC score above which a training NSBR is removed.
    #[arg(long, global = true)]
    farsec_threshold: Option<f64>,
    /// Number of FARSEC keywords.
    #[arg(long, global = true)]
    keywords: Option<usize>,
    /// Maximum vocabulary size for TF-IDF features.
    #[arg(long, global = true)]
    vocab_cap: Option<usize>,
    /// Differential evolution population size.
    #[arg(long, global = true)]
    population: Option<usize>,
    /// Differential evolution generations.
    #[arg(long, global = true)]
    generations: Option<usize>,
    /// Skip hyperparameter tuning and use forest defaults.
    #[arg(long, global = true)]
    no_tune: bool,
    /// Sort reports by this numeric column instead of by issue id.
    #[arg(long, global = true)]
    order_column: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate datasets and print class distributions.
    Ingest,
    /// Within-project prediction on the chronological split.
    Wpp(TargetArgs),
    /// Within-project prediction after FARSEC filtering of the training half.
    FarsecWpp(TargetArgs),
    /// Augment the target's training half with other projects' reports.
    Augment {
        #[command(flatten)]
        target: TargetArgs,
        /// Source datasets; defaults to every other loaded dataset.
        #[arg(long, value_delimiter = ',')]
        sources: Vec<String>,
        #[arg(long, value_enum, default_value_t = ModeArg::Sbrs)]
        mode: ModeArg,
    },
    /// Cross-project prediction: train on sources, test on the target.
    Cpp {
        #[command(flatten)]
        target: TargetArgs,
        /// Source datasets; defaults to every other loaded dataset.
        #[arg(long, value_delimiter = ',')]
        sources: Vec<String>,
    },
    /// Every experiment family over every loaded dataset.
    Suite {
        /// Also run every nonempty subset of sources, not just all of them.
        #[arg(long)]
        subsets: bool,
        /// Restrict to these families.
        #[arg(long, value_enum, value_delimiter = ',')]
        families: Vec<FamilyArg>,
    },
    /// Aggregate CSV from a JSON-lines results file.
    Report {
        /// Results file; defaults to `<out>/results.jsonl`.
        #[arg(long)]
        results: Option<PathBuf>,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score an `issue_id,probability` file against the target's test half.
    EvalExternal {
        #[arg(long)]
        target: String,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Write a seeded synthetic dataset CSV with a given class layout.
    Synthesize {
        /// Dataset name (recorded nowhere but the log).
        #[arg(long, default_value = "synthetic")]
        name: String,
        /// Earlier-half SBR count, earlier-half NSBR count, later-half SBR
        /// count, later-half NSBR count.
        #[arg(long, value_delimiter = ',', required = true)]
        layout: Vec<usize>,
        #[arg(long)]
        output: PathBuf,
        /// Write rows newest first.
        #[arg(long)]
        reverse: bool,
    },
    /// Write the train/validation/test manifest for a within-project run.
    Manifest {
        #[arg(long)]
        target: String,
        /// Manifest path; defaults to `<out>/manifests/<target>.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct TargetArgs {
    #[arg(long)]
    target: String,
    /// Also write the test-set probabilities to `<out>/predictions/`.
    #[arg(long)]
    export_predictions: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ModeArg {
    Sbrs,
    All,
}

impl From<ModeArg> for AugmentMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Sbrs => AugmentMode::Sbrs,
            ModeArg::All => AugmentMode::AllBrs,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum FamilyArg {
    Wpp,
    FarsecWpp,
    AugmentSbrs,
    AugmentAll,
    Cpp,
}

/// Everything a command needs once flags and recipe are merged.
struct Session {
    recipe: Recipe,
    datasets: Vec<Dataset>,
}

impl Session {
    fn open(common: &CommonArgs) -> Result<Self> {
        let recipe = Recipe::resolve(common)?;
        let options = LoadOptions {
            order_column: recipe.order_column.clone(),
        };
        let datasets = recipe
            .data
            .iter()
            .map(|(name, path)| {
                load_dataset_with(path, name, &options)
                    .map(|(d, _)| d)
                    .with_context(|| format!("loading {}", path.display()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Session { recipe, datasets })
    }

    fn workbench(&self) -> Result<Workbench> {
        if self.datasets.is_empty() {
            bail!("no datasets given; use --data name=path");
        }
        let order = if self.recipe.order_column.is_some() {
            OrderKey::ExplicitColumn
        } else {
            OrderKey::IdAscending
        };
        Ok(Workbench::new(self.datasets.iter().cloned(), self.recipe.harness.clone(), &order)?)
    }

    fn out_dir(&self) -> Result<&Path> {
        let out = self.recipe.out.as_path();
        fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
        Ok(out)
    }
}

/// Writes result records, timings, tuning logs and the run stanza.
struct Sink<'a> {
    out: &'a Path,
    results: ResultWriter,
}

impl<'a> Sink<'a> {
    fn open(session: &'a Session, bench: &Workbench) -> Result<Self> {
        let out = session.out_dir()?;
        let stanza = serde_json::to_string(&bench.stanza(session.recipe.seed))?;
        append_line(&out.join("runs.jsonl"), &stanza)?;
        Ok(Sink {
            out,
            results: ResultWriter::append_to(out.join("results.jsonl"))?,
        })
    }

    fn record(&self, r: &ExperimentResult) -> Result<()> {
        self.results.write(r)?;
        let key = r.spec.key();
        append_line(
            &self.out.join("timings.csv"),
            &format!("{key},{:.3}", r.duration.as_secs_f64()),
        )?;
        if let Some(t) = &r.tuning {
            let dir = self.out.join("tuning");
            fs::create_dir_all(&dir)?;
            let mut body = String::from("generation\tbest_g\tparams\n");
            for line in t.log_lines() {
                body.push_str(&line);
                body.push('\n');
            }
            fs::write(dir.join(format!("{key}.tsv")), body)?;
        }
        println!("{}", summary_line(r));
        Ok(())
    }
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    writeln!(f, "{line}").with_context(|| format!("writing {}", path.display()))
}

fn summary_line(r: &ExperimentResult) -> String {
    let m = &r.metrics;
    let mut line = format!(
        "{}: recall {:.2} precision {:.2} f1 {:.2} fpr {:.2} g {:.2}",
        r.spec, m.recall, m.precision, m.f1, m.fpr, m.g_measure
    );
    if let Some(n) = r.farsec_removed {
        line.push_str(&format!(" (farsec removed {n})"));
    }
    line
}

fn sources_or_rest(bench: &Workbench, target: &str, sources: &[String]) -> Vec<String> {
    if sources.is_empty() {
        bench.names().into_iter().filter(|n| n != target).collect()
    } else {
        sources.to_vec()
    }
}

fn run_single(session: &Session, spec: ExperimentSpec, export: bool) -> Result<()> {
    let bench = session.workbench()?;
    let sink = Sink::open(session, &bench)?;
    let scored = bench
        .run_scored(&spec, &bench.forest_learner())
        .map_err(|e| e.context(spec.to_string()))?;
    if export {
        let dir = sink.out.join("predictions");
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.csv", spec.key()));
        write_predictions(&path, &scored.test, &scored.probabilities)?;
        info!("wrote {}", path.display());
    }
    sink.record(&scored.result)
}

fn ingest(session: &Session) -> Result<()> {
    if session.datasets.is_empty() {
        bail!("no datasets given; use --data name=path");
    }
    for d in &session.datasets {
        let c = d.counts();
        println!(
            "{}: {} reports, {} SBR ({:.1}%)",
            d.name(),
            c.total(),
            c.sbr,
            c.sbr_percent()
        );
    }
    let bench = session.workbench()?;
    for name in bench.names() {
        let split = split_half(bench.dataset(&name)?)?;
        let (tr, te) = (split.train.counts(), split.test.counts());
        println!(
            "{name}: train {} SBR / {} NSBR, test {} SBR / {} NSBR",
            tr.sbr, tr.nsbr, te.sbr, te.nsbr
        );
    }
    Ok(())
}

fn suite(session: &Session, subsets: bool, families: &[FamilyArg]) -> Result<()> {
    let bench = session.workbench()?;
    let sink = Sink::open(session, &bench)?;
    let seed = session.recipe.seed;
    let wanted = |f: FamilyArg| families.is_empty() || families.contains(&f);
    let names = bench.names();
    let mut specs = Vec::new();
    for (flag, farsec) in [(FamilyArg::Wpp, false), (FamilyArg::FarsecWpp, true)] {
        if wanted(flag) {
            specs.extend(names.iter().map(|t| ExperimentSpec::wpp(t, farsec, LearnerKind::Forest, seed)));
        }
    }
    if names.len() > 1 {
        for (flag, mode) in [(FamilyArg::AugmentSbrs, AugmentMode::Sbrs), (FamilyArg::AugmentAll, AugmentMode::AllBrs)] {
            if wanted(flag) {
                specs.extend(augmentation_specs(&names, mode, &LearnerKind::Forest, seed, subsets));
            }
        }
    }
    info!("suite: {} single-model runs", specs.len());
    for r in bench.run_all(&specs)? {
        sink.record(&r)?;
    }
    if names.len() > 1 && wanted(FamilyArg::Cpp) {
        let groups = cpp_groups(&names, subsets);
        info!("suite: {} cross-project models", groups.len());
        let learner = bench.forest_learner();
        for g in &groups {
            for r in bench.run_cpp_group(g, &learner, seed)? {
                sink.record(&r)?;
            }
        }
    }
    Ok(())
}

fn report(session: &Session, results: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let default = session.recipe.out.join("results.jsonl");
    let path = results.unwrap_or(&default);
    let records = read_results(path).with_context(|| format!("reading {}", path.display()))?;
    let csv = aggregate_csv(&records);
    match output {
        Some(p) => fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn manifest(session: &Session, target: &str, output: Option<&Path>) -> Result<()> {
    let bench = session.workbench()?;
    let spec = ExperimentSpec::wpp(target, false, LearnerKind::Forest, session.recipe.seed);
    let m = bench.manifest(&spec)?;
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = session.out_dir()?.join("manifests");
            fs::create_dir_all(&dir)?;
            dir.join(format!("{target}.csv"))
        }
    };
    m.write(&path)?;
    println!("{} {}", m.sha256(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let session = Session::open(&cli.common)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(session.recipe.jobs)
        .build_global()
        .context("starting worker pool")?;
    let seed = session.recipe.seed;
    match &cli.command {
        Command::Ingest => ingest(&session),
        Command::Wpp(t) => run_single(
            &session,
            ExperimentSpec::wpp(&t.target, false, LearnerKind::Forest, seed),
            t.export_predictions,
        ),
        Command::FarsecWpp(t) => run_single(
            &session,
            ExperimentSpec::wpp(&t.target, true, LearnerKind::Forest, seed),
            t.export_predictions,
        ),
        Command::Augment { target, sources, mode } => {
            let bench = session.workbench()?;
            let sources = sources_or_rest(&bench, &target.target, sources);
            let spec = ExperimentSpec::augment(&target.target, &sources, (*mode).into(), LearnerKind::Forest, seed);
            run_single(&session, spec, target.export_predictions)
        }
        Command::Cpp { target, sources } => {
            let bench = session.workbench()?;
            let sources = sources_or_rest(&bench, &target.target, sources);
            let spec = ExperimentSpec::cpp(&target.target, &sources, LearnerKind::Forest, seed);
            run_single(&session, spec, target.export_predictions)
        }
        Command::Suite { subsets, families } => suite(&session, *subsets, families),
        Command::Report { results, output } => report(&session, results.as_deref(), output.as_deref()),
        Command::EvalExternal { target, predictions } => {
            let bench = session.workbench()?;
            let sink = Sink::open(&session, &bench)?;
            sink.record(&bench.evaluate_external_predictions(predictions, target)?)
        }
        Command::Manifest { target, output } => manifest(&session, target, output.as_deref()),
        Command::Synthesize {
            name,
            layout,
            output,
            reverse,
        } => {
            if layout.len() != 4 {
                bail!("--layout takes four counts: train SBR, train NSBR, test SBR, test NSBR");
            }
            let spec = SyntheticSpec::new(
                name,
                ClassCounts {
                    sbr: layout[0],
                    nsbr: layout[1],
                },
                ClassCounts {
                    sbr: layout[2],
                    nsbr: layout[3],
                },
            );
            let rows = synthetic::generate_rows(&spec, seed);
            synthetic::write_csv(&rows, output, *reverse)?;
            println!("{} rows written to {}", rows.len(), output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&format!("{e:#}")));
            ExitCode::from(1)
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
