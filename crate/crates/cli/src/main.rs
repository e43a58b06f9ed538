mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use culturag_core::analytics;
use culturag_core::bench::{self, convert, BenchError, Dataset, EvaluationRecord, RunSpec};
use culturag_core::index::{IndexBuilder, VectorIndex};
use culturag_core::kb::{self, Source};
use culturag_core::rag::{KnowledgeBase, RagEngine};
use culturag_core::stats::{self, AnnotationColumns, LongScores};
use culturag_core::task::{BenchmarkItem, TaskKind};
use serde::Serialize;

use config::{EmbedderConfig, Loaded};

/// Exit status of a run that stopped early on a backend failure and can
/// be resumed.
const EXIT_PAUSED: u8 = 75;

#[derive(Parser)]
#[command(
    name = "culturag",
    version,
    about = "Retrieval-augmented cultural-knowledge benchmarks"
)]
struct Cli {
    /// Log progress at info level (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render source records into a deduplicated KB corpus.
    BuildKb(BuildKbArgs),
    /// Embed a corpus into a vector index file.
    Index(IndexArgs),
    /// Print the nearest documents for a query.
    Query(QueryArgs),
    /// Run benchmarks from a TOML config; resumes an existing run.
    Run(RunArgs),
    /// Score run logs.
    Report(ReportArgs),
    /// Retrieval analyses over run logs.
    Analyze(AnalyzeArgs),
    /// Significance tests on long-format scores.
    Stats(StatsArgs),
    /// Convert raw benchmark files to item JSONL.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct BuildKbArgs {
    /// Source file as `kind=path`, kind one of culture_atlas, cube,
    /// culture_bank, seegull. Repeatable.
    #[arg(long = "source", value_name = "KIND=PATH", required = true)]
    sources: Vec<String>,
    /// Corpus JSONL to write.
    #[arg(long)]
    out: PathBuf,
    /// Ingest report JSON; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Index file to write.
    #[arg(long)]
    out: PathBuf,
    /// Embedder TOML (`kind = "mock"` or `kind = "remote"`); mock when absent.
    #[arg(long)]
    embedder: Option<PathBuf>,
    /// Existing index to extend with corpus documents it lacks.
    #[arg(long)]
    append: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Index file; the corpus is embedded on the fly when absent.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    embedder: Option<PathBuf>,
    #[arg(short, default_value_t = culturag_core::index::DEFAULT_TOP_N)]
    n: usize,
    text: String,
}

#[derive(Args)]
struct RunArgs {
    /// Run config TOML.
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// Compute at most this many new records per dataset.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run log JSONL. Repeatable.
    #[arg(long = "log", required = true)]
    logs: Vec<PathBuf>,
    /// Directory for reports.json, reports.csv and correctness.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long = "log", required = true)]
    logs: Vec<PathBuf>,
    /// Item JSONL of a stereotype dataset, for the stereotype match report.
    #[arg(long)]
    stereotype_items: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatsTest {
    /// Mixed repeated-measures ANOVA.
    Anova,
    /// Paired t-test between two within levels.
    Paired,
}

#[derive(Args)]
struct StatsArgs {
    /// Long CSV (subject, within, between?, score) or a ratings file with
    /// `--annotations`.
    table: PathBuf,
    #[arg(long, value_enum, default_value = "anova")]
    test: StatsTest,
    /// First within level for `--test paired`.
    #[arg(long)]
    a: Option<String>,
    /// Second within level for `--test paired`.
    #[arg(long)]
    b: Option<String>,
    /// Treat the table as human ratings (evaluator_id, country, strategy, score).
    #[arg(long)]
    annotations: bool,
    /// Write the long table used for the test here.
    #[arg(long)]
    long_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConvertKind {
    /// NormAd CSV, country context only.
    Normad,
    /// NormAd CSV, country plus value context.
    NormadValue,
    /// BLEnD multiple-choice CSV.
    Blend,
    /// Stereotype CSV (id, attribute, choices[, country]).
    Stereotype,
    /// The built-in open-ended prompt set (no input file).
    OpenEnded,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(value_enum)]
    kind: ConvertKind,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// BLEnD countries to keep. Repeatable; all when absent.
    #[arg(long = "country")]
    countries: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::BuildKb(a) => build_kb(a),
        Command::Index(a) => index(a),
        Command::Query(a) => query(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::Analyze(a) => analyze(a),
        Command::Stats(a) => stats(a),
        Command::Convert(a) => convert(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let paused = e
                .chain()
                .any(|c| matches!(c.downcast_ref(), Some(BenchError::Paused { .. })));
            ExitCode::from(if paused { EXIT_PAUSED } else { 1 })
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn embedder_config(path: Option<&Path>) -> Result<EmbedderConfig> {
    path.map_or_else(|| Ok(EmbedderConfig::default()), EmbedderConfig::load)
}

fn build_kb(args: BuildKbArgs) -> Result<()> {
    let mut records = Vec::new();
    for spec in &args.sources {
        let (kind, path) = spec
            .split_once('=')
            .with_context(|| format!("--source {spec:?} is not KIND=PATH"))?;
        let source: Source = kind.parse().map_err(anyhow::Error::msg)?;
        records.extend(kb::read_source_file(source, Path::new(path))?);
    }
    let corpus = kb::ingest(records)?;
    let mut w = create(&args.out)?;
    kb::write_corpus(&mut w, &corpus.documents)?;
    w.flush()?;
    let report = args.report.unwrap_or_else(|| with_suffix(&args.out, ".report.json"));
    write_json(&report, &corpus.report)?;
    eprintln!(
        "{} documents -> {} (report {})",
        corpus.report.total_documents,
        args.out.display(),
        report.display()
    );
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn index(args: IndexArgs) -> Result<()> {
    let docs = kb::read_corpus(&args.corpus)?;
    let embedder = embedder_config(args.embedder.as_deref())?.build()?;
    let existing = match &args.append {
        Some(path) => {
            let existing = VectorIndex::load(path).with_context(|| format!("loading {}", path.display()))?;
            if existing.dim() != embedder.dim() {
                bail!(
                    "{} holds {}-dimensional vectors but the embedder produces {}",
                    path.display(),
                    existing.dim(),
                    embedder.dim()
                );
            }
            Some(existing)
        }
        None => None,
    };
    let before = existing.as_ref().map_or(0, VectorIndex::len);
    let have: std::collections::HashSet<String> = existing
        .as_ref()
        .map(|i| i.ids().iter().cloned().collect())
        .unwrap_or_default();
    let fresh: Vec<&kb::Document> = docs.iter().filter(|d| !have.contains(&d.id)).collect();
    let mut builder = match existing {
        Some(index) => IndexBuilder::from_index(index),
        None => IndexBuilder::new(embedder.dim())?,
    };
    let texts: Vec<&str> = fresh.iter().map(|d| d.text.as_str()).collect();
    for (doc, emb) in fresh.iter().zip(embedder.embed_batch(&texts)?) {
        builder.add(doc.id.clone(), &emb)?;
    }
    let index = builder.build();
    index.save(&args.out)?;
    eprintln!(
        "{} vectors ({} new, dim {}) -> {}",
        index.len(),
        index.len() - before,
        index.dim(),
        args.out.display()
    );
    Ok(())
}

fn query(args: QueryArgs) -> Result<()> {
    let docs = kb::read_corpus(&args.corpus)?;
    let embedder = embedder_config(args.embedder.as_deref())?.build()?;
    let kb = match &args.index {
        Some(path) => KnowledgeBase::from_parts(embedder, VectorIndex::load(path)?, docs)?,
        None => KnowledgeBase::build(embedder, docs)?,
    };
    let hits = kb.retrieve(&args.text, args.n)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for h in hits {
        serde_json::to_writer(
            &mut out,
            &serde_json::json!({
                "rank": h.rank,
                "score": h.score,
                "id": h.doc.id,
                "source": h.doc.source,
                "text": h.doc.text,
            }),
        )?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DatasetSummary {
    dataset: String,
    task: TaskKind,
    log: String,
    records: usize,
    failed: usize,
}

fn run(args: RunArgs) -> Result<()> {
    let mut loaded = Loaded::read(&args.config)?;
    if let Some(w) = args.workers {
        loaded.config.workers = w;
    }
    if let Some(id) = args.run_id {
        loaded.config.run_id = id;
        loaded = Loaded::new(loaded.config, loaded.base)?;
    }
    let datasets = loaded
        .config
        .datasets
        .iter()
        .map(|d| bench::load_dataset(d.task, &loaded.path(&d.path)))
        .collect::<Result<Vec<Dataset>, _>>()?;
    let gateway = loaded.gateway()?;
    let kb = loaded.knowledge_base()?;
    let mut engine =
        RagEngine::new(&gateway, loaded.config.backend.clone()).with_temperature(loaded.config.temperature);
    if let Some(kb) = &kb {
        engine = engine.with_kb(kb);
    }

    let out = loaded.out_dir();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), &loaded.config)?;
    let spec = RunSpec {
        samples: loaded.config.samples,
        workers: loaded.config.workers.max(1),
        limit: args.limit,
        ..RunSpec::new(loaded.config.run_id.clone(), loaded.strategies.clone())
    };

    let mut summaries = Vec::new();
    let mut all = Vec::new();
    for dataset in &datasets {
        let log = out.join(format!("{}.jsonl", dataset.id));
        let summary = bench::run(dataset, &spec, &engine, &log)
            .with_context(|| format!("dataset {} (log {})", dataset.id, log.display()))?;
        eprintln!(
            "{}: {} records ({} resumed, {} computed, {} failed)",
            dataset.id, summary.total, summary.resumed, summary.computed, summary.failed
        );
        let records = bench::read_records(&log)?;
        summaries.push(DatasetSummary {
            dataset: dataset.id.clone(),
            task: dataset.task,
            log: log.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            records: records.len(),
            failed: records.iter().filter(|r| r.failed()).count(),
        });
        if !summary.complete() {
            write_json(&out.join("summary.json"), &summaries)?;
            eprintln!("stopped at --limit; rerun to continue");
            return Ok(());
        }
        all.push(records);
    }
    write_json(&out.join("summary.json"), &summaries)?;
    write_reports(&all, &out)?;
    eprintln!("outputs in {}", out.display());
    Ok(())
}

/// Writes reports.json/reports.csv/correctness.csv for scorable logs and
/// responses.csv for unlabelled ones.
fn write_reports(logs: &[Vec<EvaluationRecord>], out: &Path) -> Result<()> {
    let mut reports = Vec::new();
    let mut scored = Vec::new();
    let mut open = Vec::new();
    for records in logs {
        match bench::score_by_strategy(records) {
            Ok(r) => {
                reports.extend(r);
                scored.extend(records.iter().cloned());
            }
            Err(BenchError::NotScorable(_)) => open.extend(records.iter().cloned()),
            Err(BenchError::Empty) => {}
            Err(e) => return Err(e.into()),
        }
    }
    if !reports.is_empty() {
        write_json(&out.join("reports.json"), &reports)?;
        let mut w = create(&out.join("reports.csv"))?;
        bench::write_reports_csv(&mut w, &reports)?;
        w.flush()?;
        if let Ok(long) = bench::correctness_scores(&scored) {
            let mut w = create(&out.join("correctness.csv"))?;
            long.write_csv(&mut w)?;
            w.flush()?;
        }
        for r in &reports {
            eprintln!(
                "{} {}: accuracy {:.3} ({}/{}), malformed {:.3}",
                r.dataset, r.strategy, r.accuracy, r.correct, r.records, r.malformed_rate
            );
        }
    }
    if !open.is_empty() {
        let mut w = create(&out.join("responses.csv"))?;
        bench::write_responses_csv(&mut w, &open)?;
        w.flush()?;
    }
    Ok(())
}

fn read_logs(paths: &[PathBuf]) -> Result<Vec<Vec<EvaluationRecord>>> {
    paths
        .iter()
        .map(|p| bench::read_records(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn report(args: ReportArgs) -> Result<()> {
    let logs = read_logs(&args.logs)?;
    std::fs::create_dir_all(&args.out)?;
    write_reports(&logs, &args.out)
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let records: Vec<EvaluationRecord> = read_logs(&args.logs)?.into_iter().flatten().collect();
    std::fs::create_dir_all(&args.out)?;

    let sources = analytics::source_table(&records);
    write_json(&args.out.join("sources.json"), &sources)?;
    let mut w = create(&args.out.join("sources.csv"))?;
    analytics::write_source_csv(&mut w, &sources)?;
    w.flush()?;

    let kept = analytics::kept_table(&records);
    write_json(&args.out.join("kept.json"), &kept)?;
    let mut w = create(&args.out.join("kept.csv"))?;
    analytics::write_kept_csv(&mut w, &kept)?;
    w.flush()?;

    if let Some(path) = &args.stereotype_items {
        let dataset = bench::load_dataset(TaskKind::StereotypeAvoidance, path)?;
        let items: Vec<BenchmarkItem> = dataset.items;
        let matches = analytics::stereotype_match_report(&records, &items);
        for m in &matches {
            let flips = m.flips.map_or("n/a".to_owned(), |f| f.to_string());
            eprintln!(
                "{}: {} questions, {} retrieved a stereotype, {} exact matches, {} flips",
                m.strategy, m.questions, m.retrieved_any, m.exact_match, flips
            );
        }
        write_json(&args.out.join("stereotype.json"), &matches)?;
    }
    eprintln!("analyses in {}", args.out.display());
    Ok(())
}

fn stats(args: StatsArgs) -> Result<()> {
    let file = File::open(&args.table).with_context(|| format!("opening {}", args.table.display()))?;
    let scores = if args.annotations {
        stats::annotations_to_long(file, &AnnotationColumns::default())?
    } else {
        LongScores::read_csv(file)?
    };
    if let Some(path) = &args.long_out {
        let mut w = create(path)?;
        scores.write_csv(&mut w)?;
        w.flush()?;
    }
    let value = match args.test {
        StatsTest::Anova => serde_json::to_value(stats::rm_anova(&scores.aggregate_cells()?)?)?,
        StatsTest::Paired => {
            let (Some(a), Some(b)) = (&args.a, &args.b) else {
                bail!("--test paired needs --a and --b");
            };
            let (x, y) = scores.aggregate_cells()?.paired(a, b)?;
            serde_json::to_value(stats::paired_t(&x, &y)?)?
        }
    };
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn convert(args: ConvertArgs) -> Result<()> {
    let input = || -> Result<(String, File)> {
        let path = args.input.as_ref().context("--input is required for this kind")?;
        let origin = path.display().to_string();
        Ok((
            origin,
            File::open(path).with_context(|| format!("opening {}", path.display()))?,
        ))
    };
    let items = match args.kind {
        ConvertKind::Normad => {
            let (o, f) = input()?;
            convert::normad_csv(&o, f, false)?
        }
        ConvertKind::NormadValue => {
            let (o, f) = input()?;
            convert::normad_csv(&o, f, true)?
        }
        ConvertKind::Blend => {
            let (o, f) = input()?;
            let countries: Vec<&str> = args.countries.iter().map(String::as_str).collect();
            convert::blend_csv(&o, f, &countries)?
        }
        ConvertKind::Stereotype => {
            let (o, f) = input()?;
            convert::stereotype_csv(&o, f)?
        }
        ConvertKind::OpenEnded => convert::open_ended_items(),
    };
    let mut w = create(&args.out)?;
    bench::write_dataset(&mut w, &items)?;
    w.flush()?;
    eprintln!("{} items -> {}", items.len(), args.out.display());
    Ok(())
}
