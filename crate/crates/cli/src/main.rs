use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kfe_core::corpus::{chunk_document, load_knowledge, load_question_bank, write_knowledge, Document};
use kfe_core::eval::{
    bucket_by_steps, read_report, render_buckets, render_comparison, render_table, write_report, ExamReport,
    ReportFormat,
};
use kfe_core::fewshot::Strategy;
use kfe_core::llm::{CachedModel, LanguageModel, OpenAiClient, ReplayStore};
use kfe_core::pipeline::{
    ablate, run_exam, run_self_inquiry, ConfigError, PipelineError, Resources, RunConfig, SourceKind, Sweep,
};
use kfe_core::prompt::InstructionKind;
use kfe_core::retrieval::Bm25Params;
use kfe_core::tokenizer::HeuristicEstimator;
use kfe_core::{BankIndex, KnowledgeIndex};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "kfe", version)]
#[command(about = "Answer multiple-choice exams with retrieved knowledge and few-shot examples")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk markdown documents into knowledge JSONL
    Ingest {
        /// Markdown files or directories containing them
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Target piece size in estimated tokens
        #[arg(long, default_value_t = 130)]
        target_tokens: usize,
    },
    /// Build and save a BM25 index over knowledge pieces or bank questions
    Index {
        #[arg(long, value_enum)]
        kind: IndexKind,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Answer and grade an exam
    Run(RunArgs),
    /// Run one sweep of configurations and compare the reports
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        sweep: Sweep,
        /// Directory receiving one JSON report per sweep point
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Answer after asking the model to define each option
    Selfinquiry(RunArgs),
    /// Print a saved report as a table
    Report {
        report: PathBuf,
        /// Further reports to compare against the first
        #[arg(long)]
        compare: Vec<PathBuf>,
        /// Also print accuracy by response length in this many buckets
        #[arg(long)]
        buckets: Option<usize>,
        /// Write the report as CSV here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum IndexKind {
    Knowledge,
    Bank,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML or JSON run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Serve every model call from the replay store; never touch the network
    #[arg(long)]
    replay_only: bool,
    /// Skip questions already answered in the existing report
    #[arg(long)]
    resume: bool,
    /// Report output (.json or .csv); defaults to paths.report
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    instruction: Option<InstructionKind>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    candidate_pool: Option<usize>,
    /// Include retrieved knowledge (true/false)
    #[arg(long)]
    knowledge: Option<bool>,
    #[arg(long, value_parser = parse_source)]
    example_source: Option<SourceKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    response_reserve: Option<usize>,
    /// Single-token answers restricted to A-E
    #[arg(long)]
    constrained: Option<bool>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    max_concurrency: Option<usize>,
    #[arg(long)]
    exam: Option<PathBuf>,
    #[arg(long)]
    knowledge_index: Option<PathBuf>,
    #[arg(long)]
    bank_index: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
}

fn parse_source(s: &str) -> Result<SourceKind, String> {
    match s {
        "retrieved" => Ok(SourceKind::Retrieved),
        "random" => Ok(SourceKind::Random),
        other => Err(format!("unknown example source {other:?} (expected retrieved or random)")),
    }
}

impl Overrides {
    fn apply(self, c: &mut RunConfig) {
        fn set<T>(slot: &mut T, value: Option<T>) {
            if let Some(v) = value {
                *slot = v;
            }
        }
        set(&mut c.instruction, self.instruction);
        set(&mut c.strategy, self.strategy);
        set(&mut c.num_shots, self.shots);
        set(&mut c.use_knowledge, self.knowledge);
        set(&mut c.example_source, self.example_source);
        set(&mut c.budget, self.budget);
        set(&mut c.constrained, self.constrained);
        set(&mut c.temperature, self.temperature);
        set(&mut c.llm.model_name, self.model);
        set(&mut c.llm.base_url, self.base_url);
        set(&mut c.llm.max_concurrency, self.max_concurrency);
        if self.candidate_pool.is_some() {
            c.candidate_pool = self.candidate_pool;
        }
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        if self.response_reserve.is_some() {
            c.response_reserve = self.response_reserve;
        }
        let paths = &mut c.paths;
        for (slot, value) in [
            (&mut paths.exam, self.exam),
            (&mut paths.knowledge_index, self.knowledge_index),
            (&mut paths.bank_index, self.bank_index),
            (&mut paths.store, self.store),
            (&mut paths.templates, self.templates),
        ] {
            if value.is_some() {
                *slot = value;
            }
        }
    }
}

/// Error that maps to the configuration exit code.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.overrides.clone().apply(&mut config);
        config.validate()?;
        Ok(config)
    }

    fn report_path(&self, config: &RunConfig) -> Option<PathBuf> {
        self.out.clone().or_else(|| config.paths.report.clone())
    }

    fn prior_report(&self, config: &RunConfig) -> Result<Option<ExamReport>> {
        match self.report_path(config) {
            Some(path) if self.resume && path.exists() => {
                Ok(Some(read_report(&path).with_context(|| format!("reading {}", path.display()))?))
            }
            _ => Ok(None),
        }
    }
}

fn build_model(config: &RunConfig, replay_only: bool) -> Result<Box<dyn LanguageModel>> {
    let store = match &config.paths.store {
        Some(path) => Some(Arc::new(ReplayStore::open(path)?)),
        None => None,
    };
    if replay_only {
        let store = store.ok_or_else(|| usage("--replay-only needs paths.store (or --store)"))?;
        log::info!("replay only: {} stored responses", store.len());
        return Ok(Box::new(CachedModel::replay_only(store)));
    }
    let client = OpenAiClient::new(config.llm.clone());
    Ok(match store {
        Some(store) => Box::new(CachedModel::recording(client, store)),
        None => Box::new(client),
    })
}

fn emit_report(report: &ExamReport, path: Option<&Path>) -> Result<()> {
    match path {
        Some(path) => {
            write_report(report, path, ReportFormat::from_path(path))?;
            print!("{}", render_table(report));
        }
        None => print!("{}", kfe_core::eval::report_to_json(report)),
    }
    Ok(())
}

fn partial_exit(report: &ExamReport) -> u8 {
    let failures = report.failures();
    if failures > 0 {
        log::warn!("{failures} of {} questions failed", report.total());
        EXIT_PARTIAL
    } else {
        0
    }
}

fn markdown_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .with_context(|| format!("reading {}", input.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "md" || e == "txt"))
                .collect();
            found.sort();
            files.extend(found);
        } else if input.is_file() {
            files.push(input.clone());
        } else {
            return Err(usage(format!("{} not found", input.display())));
        }
    }
    Ok(files)
}

fn ingest(inputs: &[PathBuf], out: &Path, target_tokens: usize) -> Result<u8> {
    let mut pieces = Vec::new();
    for file in markdown_files(inputs)? {
        let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
        let id = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let doc = Document::from_markdown(id, &text);
        let chunked = chunk_document(&doc, target_tokens, &HeuristicEstimator)?;
        log::info!("{}: {} pieces", file.display(), chunked.len());
        pieces.extend(chunked);
    }
    write_knowledge(out, &pieces)?;
    println!("wrote {} pieces to {}", pieces.len(), out.display());
    Ok(0)
}

fn index(kind: IndexKind, input: &Path, out: &Path) -> Result<u8> {
    let (count, rejected) = match kind {
        IndexKind::Knowledge => {
            let loaded = load_knowledge(input, &HeuristicEstimator)?;
            let count = loaded.value.len();
            KnowledgeIndex::build(loaded.value, Bm25Params::default())?.save(out)?;
            (count, loaded.rejected)
        }
        IndexKind::Bank => {
            let loaded = load_question_bank(input)?;
            let count = loaded.value.len();
            BankIndex::build(loaded.value.into_entries(), Bm25Params::default())?.save(out)?;
            (count, loaded.rejected)
        }
    };
    for r in &rejected {
        log::warn!("{}: {r}", input.display());
    }
    println!("indexed {count} documents into {} ({} lines rejected)", out.display(), rejected.len());
    Ok(0)
}

fn run(args: &RunArgs, self_inquiry: bool) -> Result<u8> {
    let config = args.config()?;
    let resources = Resources::load(&[&config])?;
    let model = build_model(&config, args.replay_only)?;
    let prior = args.prior_report(&config)?;
    let report = if self_inquiry {
        run_self_inquiry(&config, &resources, &model, prior.as_ref())?
    } else {
        run_exam(&config, &resources, &model, prior.as_ref())?
    };
    emit_report(&report, args.report_path(&config).as_deref())?;
    Ok(partial_exit(&report))
}

fn run_ablation(args: &RunArgs, sweep: Sweep, out_dir: Option<&Path>) -> Result<u8> {
    let base = args.config()?;
    let points = kfe_core::pipeline::sweep_points(&base, sweep);
    let configs: Vec<&RunConfig> = points.iter().map(|(_, c)| c).collect();
    let resources = Resources::load(&configs)?;
    let model = build_model(&base, args.replay_only)?;
    let reports = ablate(&base, sweep, &resources, &model)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (label, report) in &reports {
            write_report(report, dir.join(format!("{label}.json")), ReportFormat::Json)?;
        }
    }
    print!("{}", render_comparison(&reports));
    Ok(reports.iter().map(|(_, r)| partial_exit(r)).max().unwrap_or(0))
}

fn report(path: &Path, compare: &[PathBuf], buckets: Option<usize>, csv: Option<&Path>) -> Result<u8> {
    let main = read_report(path)?;
    if compare.is_empty() {
        print!("{}", render_table(&main));
    } else {
        let mut rows = vec![(main.label.clone().unwrap_or_else(|| path.display().to_string()), main.clone())];
        for other in compare {
            let r = read_report(other)?;
            rows.push((r.label.clone().unwrap_or_else(|| other.display().to_string()), r));
        }
        print!("{}", render_comparison(&rows));
    }
    if let Some(n) = buckets {
        print!("{}", render_buckets(&bucket_by_steps(&main.per_question, n)?));
    }
    if let Some(csv) = csv {
        write_report(&main, csv, ReportFormat::Csv)?;
    }
    Ok(0)
}

fn is_config_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause.is::<UsageError>()
            || cause.is::<ConfigError>()
            || matches!(cause.downcast_ref::<PipelineError>(), Some(PipelineError::Config(_)))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Ingest { inputs, out, target_tokens } => ingest(inputs, out, *target_tokens),
        Command::Index { kind, input, out } => index(*kind, input, out),
        Command::Run(args) => run(args, false),
        Command::Selfinquiry(args) => run(args, true),
        Command::Ablate { run, sweep, out_dir } => run_ablation(run, *sweep, out_dir.as_deref()),
        Command::Report { report: path, compare, buckets, csv } => report(path, compare, *buckets, csv.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_config_error(&err) { EXIT_CONFIG } else { EXIT_FAILURE })
        }
    }
}
