//! `memgauge` command-line interface.
//!
//! Every subcommand takes long flags and an optional `--config file.json`
//! whose keys (flag names in snake_case) override the flags. Exit codes:
//! 0 success, 2 config error, 3 data error, 4 training or oracle failure.
//! Failures print a one-line JSON error record on stderr.

mod config;

use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use memgauge::corpus::{load_corpus, normalize_source, write_corpus, BugMeta, Corpus, Task};
use memgauge::csr::{self, CsrOptions, Oracle, SubprocessOracle};
use memgauge::noising::{self, NoiseMode, NoiseOptions};
use memgauge::refmodel::{RefModel, RunLabel, TrainConfig};
use memgauge::report::{self, CsrEntry};
use memgauge::study::{self, StudyError, StudyManifest};
use memgauge::synth::{self, SynthConfig};
use memgauge::telemetry::{self, JsonlSink};

type CliResult = Result<(), StudyError>;

#[derive(Parser)]
#[command(name = "memgauge", version, about = "Noise studies and memorization diagnostics for code models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lex raw source records into a normalized corpus.
    Normalize(NormalizeArgs),
    /// Inject seeded noise into a corpus.
    Noise(NoiseArgs),
    /// Train the reference model and write its telemetry trace.
    Train(TrainArgs),
    /// Compute metric tables and charts from a trace.
    Analyze(AnalyzeArgs),
    /// Critical sample ratio of a test set against a model or an external oracle.
    Csr(CsrArgs),
    /// Rebuild tables, charts and the summary of an existing study directory.
    Report(ReportArgs),
    /// Run every pipeline of a study manifest.
    RunStudy(RunStudyArgs),
    /// Generate a synthetic method-name corpus pair.
    Synth(SynthArgs),
    /// Answer oracle protocol requests on stdin with a trained model.
    OracleServe(OracleServeArgs),
}

#[derive(Args, Serialize, Deserialize)]
struct NormalizeArgs {
    /// JSONL of {id, code, ...} records.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    task: Task,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct NoiseArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    task: Task,
    #[arg(long)]
    mode: NoiseMode,
    #[arg(long)]
    rate: f64,
    #[arg(long, env = "MEMGAUGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Where to write the noise manifest; defaults to `<output>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    identity_top_k: usize,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    heldout: PathBuf,
    #[arg(long)]
    task: Task,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, env = "MEMGAUGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "run")]
    run_id: String,
    /// Recorded in telemetry; the corpus is used as given.
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
    #[arg(long, default_value = "none")]
    noise_mode: String,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct AnalyzeArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    task: Task,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct CsrArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    task: Task,
    /// Reference-model checkpoint to probe in process.
    #[arg(long, conflicts_with = "oracle_command")]
    model: Option<PathBuf>,
    /// External oracle program speaking the line protocol.
    #[arg(long)]
    oracle_command: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    oracle_arg: Vec<String>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct ReportArgs {
    #[arg(long)]
    study_dir: PathBuf,
    #[arg(long, env = "MEMGAUGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct RunStudyArgs {
    /// Study manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Parallel pipelines; 0 means one per available core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Used when the manifest lists no seeds.
    #[arg(long, env = "MEMGAUGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, env = "MEMGAUGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SynthConfig::default().labels)]
    labels: usize,
    #[arg(long, default_value_t = SynthConfig::default().train_per_label)]
    train_per_label: usize,
    #[arg(long, default_value_t = SynthConfig::default().heldout_per_label)]
    heldout_per_label: usize,
    #[arg(long, default_value_t = SynthConfig::default().signal)]
    signal: f64,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct OracleServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

/// Raw input of `normalize`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    code: String,
    #[serde(default)]
    target_label: Option<String>,
    #[serde(default)]
    target_tokens: Option<Vec<String>>,
    #[serde(default)]
    query_tokens: Option<Vec<String>>,
    #[serde(default)]
    bug_meta: Option<BugMeta>,
}

fn load_model(path: &Path) -> Result<RefModel, StudyError> {
    RefModel::load(path).map(|(m, _)| m).map_err(|e| StudyError::data_at(path, e))
}

fn normalize(a: NormalizeArgs) -> CliResult {
    let file = std::fs::File::open(&a.input).map_err(|e| StudyError::data_at(&a.input, e))?;
    let mut samples = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| StudyError::data_at(&a.input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| StudyError::data_at(&a.input, format!("line {}: {msg}", n + 1));
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let mut s = normalize_source(&raw.code, a.task, &raw.id).map_err(|e| at(e.to_string()))?;
        if let Some(l) = raw.target_label {
            s.target_label = l;
        }
        if let Some(t) = raw.target_tokens {
            s.target_tokens = t;
        }
        if let Some(q) = raw.query_tokens {
            s.query_tokens = q;
        }
        if raw.bug_meta.is_some() {
            s.bug_meta = raw.bug_meta;
        }
        samples.push(s);
    }
    let corpus = Corpus::new(a.task, samples)?;
    write_corpus(&corpus, &a.output)?;
    println!("{} samples -> {}", corpus.len(), a.output.display());
    Ok(())
}

fn noise(a: NoiseArgs) -> CliResult {
    let corpus = load_corpus(&a.corpus, a.task)?;
    let options = NoiseOptions {
        identity_top_k: a.identity_top_k,
    };
    let plan = noising::plan_noise_with(&corpus, a.rate, a.mode, a.seed, &options)?;
    let noisy = noising::apply(&corpus, &plan)?;
    write_corpus(&noisy, &a.output)?;
    let manifest = a.manifest.clone().unwrap_or_else(|| {
        let mut p = a.output.clone().into_os_string();
        p.push(".manifest.json");
        PathBuf::from(p)
    });
    let m = plan.manifest(&corpus);
    m.write(&manifest)?;
    println!(
        "{} of {} samples noised ({} short) -> {}",
        m.selected_count,
        m.sample_count,
        m.shortfall,
        a.output.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> CliResult {
    let train = load_corpus(&a.train, a.task)?;
    let heldout = load_corpus(&a.heldout, a.task)?;
    let mut model = RefModel::for_corpora(&train, &heldout, a.dim, a.min_count, a.seed)?;
    let hyper = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed: a.seed,
    };
    let label = RunLabel {
        run_id: a.run_id.clone(),
        noise_rate: a.noise_rate,
        noise_mode: a.noise_mode.clone(),
    };
    let mut sink = JsonlSink::create(&a.trace)?;
    model.train(&train, &heldout, &hyper, &label, &mut sink)?;
    drop(sink);
    model
        .save(&a.model, Some(&hyper))
        .map_err(|e| StudyError::data_at(&a.model, e))?;
    println!("trained {} parameters -> {}", model.param_count(), a.model.display());
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> CliResult {
    let trace = telemetry::read_trace(&a.trace)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| StudyError::data_at(&a.out_dir, e))?;
    let analysis = study::analyze(&trace, a.task)?;
    let mut files = study::write_analysis(&analysis, &a.out_dir)?;
    files.extend(study::write_plots(&[&analysis], &a.out_dir.join("plots"))?);
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn probe(a: CsrArgs) -> CliResult {
    let corpus = load_corpus(&a.corpus, a.task)?;
    let oracle: Box<dyn Oracle> = match (&a.model, &a.oracle_command) {
        (Some(m), None) => Box::new(load_model(m)?),
        (None, Some(cmd)) => Box::new(
            SubprocessOracle::with_timeout(
                cmd,
                &a.oracle_arg,
                a.workers,
                std::time::Duration::from_secs(a.timeout_secs),
            )
            .map_err(|e| StudyError::Oracle(format!("cannot start {}: {e}", cmd.display())))?,
        ),
        _ => return Err(StudyError::Config("pass exactly one of --model or --oracle-command".into())),
    };
    let opts = CsrOptions {
        budget: a.budget,
        workers: a.workers,
    };
    let report = csr::csr(&corpus, oracle.as_ref(), &opts)?;
    let mut text = serde_json::to_string_pretty(&report).map_err(StudyError::data)?;
    text.push('\n');
    std::fs::write(&a.output, text).map_err(|e| StudyError::data_at(&a.output, e))?;
    let csv_path = a.output.with_extension("csv");
    let entry = CsrEntry {
        run_id: a.corpus.display().to_string(),
        noise_rate: 0.0,
        epoch: 0,
        report: report.clone(),
    };
    report::emit_csv(&[entry], &csv_path)?;
    println!("csr {} ({} of {})", report::format_sig(report.ratio), report.critical_ids.len(), report.test_size);
    Ok(())
}

fn report_cmd(a: ReportArgs) -> CliResult {
    let outcome = study::reanalyze(&a.study_dir, a.seed)?;
    println!("{} files indexed in {}", outcome.files.len(), a.study_dir.join("summary.md").display());
    Ok(())
}

fn run_study(a: RunStudyArgs) -> CliResult {
    let (manifest, base) = StudyManifest::load(&a.manifest)?;
    let workers = match a.workers {
        0 => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        n => n,
    };
    let outcome = study::run_study(&manifest, &base, &a.out, a.seed, workers)?;
    println!(
        "{} runs, {} files -> {}",
        outcome.runs.len(),
        outcome.files.len(),
        a.out.join("summary.md").display()
    );
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> CliResult {
    let cfg = SynthConfig {
        labels: a.labels,
        train_per_label: a.train_per_label,
        heldout_per_label: a.heldout_per_label,
        signal: a.signal,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let corpora = synth::generate(&cfg).map_err(|e| match e {
        synth::SynthError::InvalidConfig(m) => StudyError::Config(m),
        synth::SynthError::Corpus(c) => c.into(),
    })?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| StudyError::data_at(&a.out_dir, e))?;
    write_corpus(&corpora.train, &a.out_dir.join("train.jsonl"))?;
    write_corpus(&corpora.heldout, &a.out_dir.join("heldout.jsonl"))?;
    println!("{} train, {} held-out -> {}", corpora.train.len(), corpora.heldout.len(), a.out_dir.display());
    Ok(())
}

fn oracle_serve(a: OracleServeArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let stdin = std::io::stdin();
    csr::serve(&model, stdin.lock(), std::io::stdout().lock())
        .map_err(|e| StudyError::Oracle(format!("serving: {e}")))
}

fn dispatch(command: Command) -> CliResult {
    use config::with_config as cfg;
    match command {
        Command::Normalize(a) => normalize(cfg(a, |a| &a.config)?),
        Command::Noise(a) => noise(cfg(a, |a| &a.config)?),
        Command::Train(a) => train(cfg(a, |a| &a.config)?),
        Command::Analyze(a) => analyze(cfg(a, |a| &a.config)?),
        Command::Csr(a) => probe(cfg(a, |a| &a.config)?),
        Command::Report(a) => report_cmd(cfg(a, |a| &a.config)?),
        Command::RunStudy(a) => run_study(cfg(a, |a| &a.config)?),
        Command::Synth(a) => synth_cmd(cfg(a, |a| &a.config)?),
        Command::OracleServe(a) => oracle_serve(cfg(a, |a| &a.config)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let record = serde_json::to_string(&e.record(None)).unwrap_or_default();
            eprintln!("{record}");
            ExitCode::from(e.exit_code())
        }
    }
}
