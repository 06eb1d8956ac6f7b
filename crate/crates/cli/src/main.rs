//! `kgpath` command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning                              |
//! |------|--------------------------------------|
//! | 0    | success                              |
//! | 1    | I/O or other unclassified failure    |
//! | 2    | invalid command-line usage           |
//! | 3    | configuration, script or prompt file |
//! | 4    | graph or label file                  |
//! | 5    | dataset or trace file                |
//! | 10   | decompose                            |
//! | 11   | rel_retrieve (includes scorer setup) |
//! | 12   | rel_prune                            |
//! | 13   | tri_retrieve                         |
//! | 14   | tri_prune                            |
//! | 15   | au_gate                              |
//! | 16   | fallback                             |
//! | 17   | final                                |

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use kgpath_core::config::ConfigError;
use kgpath_core::engine::{read_trace_jsonl, write_trace_jsonl};
use kgpath_core::eval::{load_dataset, CSV_HEADER};
use kgpath_core::graph::{load_graph_with_stats, load_labels};
use kgpath_core::pipeline::BuildError;
use kgpath_core::{Config, Normalization, Pipeline, PipelineError, Question, Stage, TraceRecord};

#[derive(Parser)]
#[command(name = "kgpath", version, about = "Multi-hop question answering over a knowledge graph")]
struct Cli {
    /// Log filter, e.g. `info` or `kgpath_core=debug`. Overrides RUST_LOG.
    #[arg(long, global = true)]
    log: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a triple file and report its size.
    Ingest {
        graph: PathBuf,
        /// `id<TAB>label` file applied to the graph.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Write the deduplicated graph and labels here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer one question, or one per line of `--file`.
    Answer {
        text: Option<String>,
        #[arg(long, short)]
        config: PathBuf,
        /// Plain-text file with one question per line.
        #[arg(long, conflicts_with = "text")]
        file: Option<PathBuf>,
        /// Key-entity link, `mention=entity_id`. Repeatable.
        #[arg(long = "entity", value_name = "MENTION=ID")]
        entities: Vec<String>,
        /// Write the stage trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the rendered final-answer prompt.
        #[arg(long)]
        dump_context: Option<PathBuf>,
    },
    /// Evaluate a JSON-lines dataset and write metrics.
    Eval {
        dataset: PathBuf,
        #[arg(long, short)]
        config: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Directory for `metrics.json` and `results.csv`.
        #[arg(long)]
        report: PathBuf,
        /// Overrides the answer normalization from the config.
        #[arg(long, value_enum)]
        normalization: Option<NormArg>,
    },
    /// Pretty-print a trace file.
    Trace {
        file: PathBuf,
        /// Print full payloads instead of one-line summaries.
        #[arg(long)]
        full: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Strict,
    Relaxed,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Strict => Normalization::Strict,
            NormArg::Relaxed => Normalization::Relaxed,
        }
    }
}

/// An error with the exit code and stage label it maps to.
struct Failure {
    code: u8,
    label: &'static str,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, label: &'static str, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            label,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self::new(1, "io", error)
    }
}

fn stage_code(stage: Stage) -> u8 {
    match stage {
        Stage::Decompose => 10,
        Stage::RelRetrieve => 11,
        Stage::RelPrune => 12,
        Stage::TriRetrieve => 13,
        Stage::TriPrune => 14,
        Stage::AuGate => 15,
        Stage::Fallback => 16,
        Stage::Final => 17,
    }
}

fn pipeline_failure(err: PipelineError) -> Failure {
    let stage = err.stage();
    Failure::new(stage_code(stage), stage.as_str(), err)
}

fn config_failure(err: ConfigError) -> Failure {
    Failure::new(3, "config", err)
}

fn build_failure(err: BuildError) -> Failure {
    match err {
        BuildError::Graph(_) => Failure::new(4, "graph", err),
        // The scorer is first needed for relation retrieval.
        BuildError::Scorer(_) => Failure::new(stage_code(Stage::RelRetrieve), Stage::RelRetrieve.as_str(), err),
        BuildError::Script(_) | BuildError::Prompt(_) => Failure::new(3, "config", err),
    }
}

fn load_pipeline(config: &Path) -> Result<(Config, Pipeline), Failure> {
    let config = Config::load(config).map_err(config_failure)?;
    let pipeline = Pipeline::from_config(&config).map_err(build_failure)?;
    Ok((config, pipeline))
}

fn ingest(graph: &Path, labels: Option<&Path>, out: Option<&Path>) -> Result<(), Failure> {
    let graph_err = |e| Failure::new(4, "graph", e);
    let (mut kg, stats) = load_graph_with_stats(graph).map_err(graph_err)?;
    let labels = labels.map(load_labels).transpose().map_err(graph_err)?;
    if let Some(labels) = &labels {
        kg.apply_labels(labels);
    }
    println!(
        "{} triples, {} entities, {} relations",
        kg.triple_count(),
        kg.entity_count(),
        kg.relation_count()
    );
    if stats.duplicates > 0 {
        println!("{} duplicate triples removed", stats.duplicates);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("triples.tsv");
        kg.write_tsv(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
            .context("writing triples")?;
        if labels.is_some() {
            let path = dir.join("labels.tsv");
            kg.write_labels(BufWriter::new(
                File::create(&path).with_context(|| format!("creating {}", path.display()))?,
            ))
            .context("writing labels")?;
        }
        let summary = serde_json::json!({
            "triples": kg.triple_count(),
            "entities": kg.entity_count(),
            "relations": kg.relation_count(),
            "lines": stats.lines,
            "duplicates": stats.duplicates,
        });
        fs::write(dir.join("stats.json"), format!("{summary:#}\n")).context("writing stats.json")?;
    }
    Ok(())
}

fn parse_links(items: &[String]) -> Result<BTreeMap<String, String>, Failure> {
    items
        .iter()
        .map(|item| match item.split_once('=') {
            Some((m, id)) if !m.trim().is_empty() && !id.trim().is_empty() => {
                Ok((m.trim().to_string(), id.trim().to_string()))
            }
            _ => Err(Failure::new(2, "usage", anyhow::anyhow!("--entity expects MENTION=ID, got `{item}`"))),
        })
        .collect()
}

struct AnswerArgs<'a> {
    text: Option<&'a str>,
    config: &'a Path,
    file: Option<&'a Path>,
    entities: &'a [String],
    trace: Option<&'a Path>,
    dump_context: Option<&'a Path>,
}

fn answer(args: AnswerArgs<'_>) -> Result<(), Failure> {
    let links = parse_links(args.entities)?;
    let texts: Vec<String> = match (args.text, args.file) {
        (Some(t), _) => vec![t.to_string()],
        (None, Some(path)) => fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(|e| Failure::new(5, "dataset", e))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect(),
        (None, None) => {
            return Err(Failure::new(2, "usage", anyhow::anyhow!("give a question or --file")));
        }
    };
    let (_, pipeline) = load_pipeline(args.config)?;
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut contexts = Vec::new();
    for (i, text) in texts.iter().enumerate() {
        let mut question = Question::new(format!("q{}", i + 1), text.as_str());
        question.key_entities = links.clone();
        let result = pipeline.answer(&question).map_err(pipeline_failure)?;
        if texts.len() > 1 {
            print!("{}\t", question.id);
        }
        if result.unanswerable {
            println!("(unanswerable)");
        } else {
            println!("{}", result.answers.join("; "));
        }
        trace.extend(result.trace);
        contexts.push(result.context.rendered);
    }
    if let Some(path) = args.trace {
        let out = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(out);
        write_trace_jsonl(&trace, &mut out).context("writing trace")?;
        out.flush().context("writing trace")?;
    }
    if let Some(path) = args.dump_context {
        fs::write(path, contexts.join("\n\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn eval(
    dataset: &Path,
    config: &Path,
    parallel: usize,
    report: &Path,
    normalization: Option<Normalization>,
) -> Result<(), Failure> {
    let (questions, skipped) = load_dataset(dataset)
        .with_context(|| format!("reading {}", dataset.display()))
        .map_err(|e| Failure::new(5, "dataset", e))?;
    for s in &skipped {
        tracing::warn!(line = s.line, "skipping dataset line: {}", s.message);
    }
    if !skipped.is_empty() {
        eprintln!("skipped {} malformed dataset lines", skipped.len());
    }
    let (cfg, pipeline) = load_pipeline(config)?;
    let norm = normalization.unwrap_or(cfg.eval.normalization);
    let (results, metrics) = pipeline.evaluate(&questions, parallel.max(1), norm);

    fs::create_dir_all(report).with_context(|| format!("creating {}", report.display()))?;
    let json = serde_json::to_string_pretty(&metrics).context("serializing metrics")?;
    fs::write(report.join("metrics.json"), json + "\n").context("writing metrics.json")?;
    let mut csv = csv::Writer::from_path(report.join("results.csv")).context("creating results.csv")?;
    csv.write_record(CSV_HEADER).context("writing results.csv")?;
    for r in &results {
        csv.write_record(r.csv_row()).context("writing results.csv")?;
    }
    csv.flush().context("writing results.csv")?;
    print!("{}", metrics.table());
    Ok(())
}

fn summarize(r: &TraceRecord) -> String {
    let p = &r.payload;
    let field = |k: &str| p.get(k).map(|v| v.to_string()).unwrap_or_default();
    match r.stage {
        Stage::Decompose => format!("chains={}", p["chains"].as_array().map_or(0, Vec::len)),
        Stage::RelRetrieve => format!("source={} ranked={}", field("source"), p["ranked"].as_array().map_or(0, Vec::len)),
        Stage::RelPrune => format!("kept={}", field("kept")),
        Stage::TriRetrieve => format!("selected={} cumulative={}", p["selected"].as_array().map_or(0, Vec::len), field("cumulative")),
        Stage::TriPrune => format!("answers={} dropped={}", field("answers"), field("dropped")),
        Stage::AuGate => format!("au={} decision={}", field("au"), field("decision")),
        Stage::Fallback => format!("round={} offered={}", field("round"), field("offered")),
        Stage::Final => format!("answers={} paths={} context_paths={}", field("answers"), field("paths"), field("context_paths")),
    }
}

fn show_trace(file: &Path, full: bool) -> Result<(), Failure> {
    let input = File::open(file)
        .with_context(|| format!("opening {}", file.display()))
        .map_err(|e| Failure::new(5, "trace", e))?;
    let records = read_trace_jsonl(BufReader::new(input))
        .with_context(|| format!("reading {}", file.display()))
        .map_err(|e| Failure::new(5, "trace", e))?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for r in &records {
        let at = match (r.chain, r.depth) {
            (Some(c), Some(d)) => format!("chain {c} depth {d}"),
            _ => "-".to_string(),
        };
        let body = if full {
            serde_json::to_string_pretty(&r.payload).unwrap_or_default()
        } else {
            summarize(r)
        };
        writeln!(out, "{:>9.3}ms  {:<12} {:<16} {body}", r.duration * 1e3, r.stage.as_str(), at)
            .context("writing output")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest { graph, labels, out } => ingest(&graph, labels.as_deref(), out.as_deref()),
        Command::Answer {
            text,
            config,
            file,
            entities,
            trace,
            dump_context,
        } => answer(AnswerArgs {
            text: text.as_deref(),
            config: &config,
            file: file.as_deref(),
            entities: &entities,
            trace: trace.as_deref(),
            dump_context: dump_context.as_deref(),
        }),
        Command::Eval {
            dataset,
            config,
            parallel,
            report,
            normalization,
        } => eval(&dataset, &config, parallel, &report, normalization.map(Into::into)),
        Command::Trace { file, full } => show_trace(&file, full),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = match &cli.log {
        Some(f) => tracing_subscriber::EnvFilter::new(f),
        None => tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
    };
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error [{}]: {:#}", f.label, f.error);
            ExitCode::from(f.code)
        }
    }
}
