//! Study manifests and the noise-study pipeline.
//!
//! A study trains one reference model per (seed, noise rate) pair and
//! writes everything under a single directory:
//!
//! ```text
//! <out>/
//!   study.json              the manifest as given
//!   summary.md              tables per seed plus an index of every file
//!   FAILED                  only when a pipeline failed (error record)
//!   seed-<s>/
//!     metrics.csv scores.csv [csr.csv]
//!     plots/<metric>.svg plots/scores-<split>.svg
//!     noise-<pct>/
//!       noisy.jsonl noise_manifest.json model.json trace.jsonl
//!       metrics.csv scores.csv [csr.json]
//!       FAILED              only when this pipeline failed
//! ```
//!
//! Nothing written depends on the clock or on scheduling, so a rerun over
//! the same manifest reproduces the tree byte for byte.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, write_corpus, Corpus, CorpusError, Task};
use crate::csr::{self, CsrError, CsrOptions};
use crate::metrics::{self, MetricSeries, MetricsError, ScoreCurve};
use crate::noising::{self, NoiseError, NoiseMode, NoiseOptions};
use crate::refmodel::{ModelError, RefModel, RunLabel, TrainConfig};
use crate::report::{self, CsrEntry, PlotSeries, PlotStyle, ReportError, RunSummary};
use crate::telemetry::{self, JsonlSink, RunTrace, Split, TelemetryError};

pub const LAYOUT_VERSION: u32 = 1;
pub const DEFAULT_RATES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const MAX_RATES: usize = report::MAX_SERIES / 2;
const FAILED: &str = "FAILED";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StudyError {
    #[error("config: {0}")]
    Config(String),
    #[error("data{}: {message}", path.as_ref().map(|p| format!(" ({})", p.display())).unwrap_or_default())]
    Data { path: Option<PathBuf>, message: String },
    #[error("training: {0}")]
    Training(String),
    #[error("oracle: {0}")]
    Oracle(String),
}

/// Machine-readable form of a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub code: u8,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<String>,
}

impl StudyError {
    pub fn data(message: impl std::fmt::Display) -> Self {
        StudyError::Data {
            path: None,
            message: message.to_string(),
        }
    }

    pub fn data_at(path: &Path, message: impl std::fmt::Display) -> Self {
        StudyError::Data {
            path: Some(path.to_path_buf()),
            message: message.to_string(),
        }
    }

    /// Process exit status: 2 config, 3 data, 4 training or oracle.
    pub fn exit_code(&self) -> u8 {
        match self {
            StudyError::Config(_) => 2,
            StudyError::Data { .. } => 3,
            StudyError::Training(_) | StudyError::Oracle(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            StudyError::Config(_) => "config",
            StudyError::Data { .. } => "data",
            StudyError::Training(_) => "training",
            StudyError::Oracle(_) => "oracle",
        }
    }

    pub fn record(&self, run: Option<&str>) -> ErrorRecord {
        let (message, path) = match self {
            StudyError::Data { path, message } => (message.clone(), path.as_ref().map(|p| p.display().to_string())),
            StudyError::Config(m) | StudyError::Training(m) | StudyError::Oracle(m) => (m.clone(), None),
        };
        ErrorRecord {
            kind: self.kind().to_string(),
            code: self.exit_code(),
            message,
            path,
            run: run.map(str::to_string),
        }
    }
}

impl From<CorpusError> for StudyError {
    fn from(e: CorpusError) -> Self {
        match &e {
            CorpusError::Io { path, .. } => StudyError::data_at(&path.clone(), e),
            _ => StudyError::data(e),
        }
    }
}

impl From<TelemetryError> for StudyError {
    fn from(e: TelemetryError) -> Self {
        match &e {
            TelemetryError::Io { path, .. } => StudyError::data_at(&path.clone(), e),
            _ => StudyError::data(e),
        }
    }
}

impl From<NoiseError> for StudyError {
    fn from(e: NoiseError) -> Self {
        match e {
            NoiseError::ModeTaskMismatch { .. } | NoiseError::InvalidRate(_) => StudyError::Config(e.to_string()),
            NoiseError::Corpus(c) => c.into(),
            other => StudyError::data(other),
        }
    }
}

impl From<ModelError> for StudyError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::DivergedLoss { .. } => StudyError::Training(e.to_string()),
            ModelError::InvalidHyper(_) | ModelError::UnsupportedTask(_) => StudyError::Config(e.to_string()),
            ModelError::Telemetry(t) => t.into(),
            other => StudyError::data(other),
        }
    }
}

impl From<MetricsError> for StudyError {
    fn from(e: MetricsError) -> Self {
        StudyError::data(e)
    }
}

impl From<ReportError> for StudyError {
    fn from(e: ReportError) -> Self {
        StudyError::data(e)
    }
}

impl From<CsrError> for StudyError {
    fn from(e: CsrError) -> Self {
        match e {
            CsrError::EmptyTestSet => StudyError::data(e),
            other => StudyError::Oracle(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub min_count: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dim: 8,
            min_count: 1,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
        }
    }
}

impl ModelConfig {
    pub fn hyper(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed,
        }
    }
}

/// Present in a manifest to enable CSR probing of the held-out set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsrConfig {
    pub budget: Option<usize>,
    /// Probe after every epoch instead of only the final model.
    pub every_epoch: bool,
}

fn default_rates() -> Vec<f64> {
    DEFAULT_RATES.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyManifest {
    pub name: String,
    pub task: Task,
    /// Relative paths resolve against the manifest's directory.
    pub train_corpus: PathBuf,
    pub heldout_corpus: PathBuf,
    pub noise_mode: NoiseMode,
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    /// Empty means the caller's default seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csr: Option<CsrConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity_top_k: Option<usize>,
}

impl StudyManifest {
    pub fn from_json(text: &str) -> Result<Self, StudyError> {
        serde_json::from_str(text).map_err(|e| StudyError::Config(format!("manifest: {e}")))
    }

    /// Reads a manifest; corpus paths are made relative to its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), StudyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| StudyError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let manifest = Self::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        let bad = |m: String| Err(StudyError::Config(m));
        if self.name.is_empty()
            || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return bad(format!("study name `{}` must be non-empty [A-Za-z0-9._-]", self.name));
        }
        if !matches!(self.task, Task::MethodName | Task::CodeSearch) {
            return bad(format!("the reference model does not train {} corpora", self.task));
        }
        if self.noise_mode.task() != self.task {
            return bad(format!("noise mode {} belongs to {}, not {}", self.noise_mode, self.noise_mode.task(), self.task));
        }
        if self.rates.is_empty() || self.rates.len() > MAX_RATES {
            return bad(format!("a study takes 1 to {MAX_RATES} noise rates"));
        }
        for (i, r) in self.rates.iter().enumerate() {
            if !(0.0..=1.0).contains(r) {
                return bad(format!("noise rate {r} outside [0, 1]"));
            }
            if self.rates[..i].iter().any(|q| run_slug(*q) == run_slug(*r)) {
                return bad(format!("noise rate {r} listed twice"));
            }
        }
        let seeds = &self.seeds;
        if seeds.iter().enumerate().any(|(i, s)| seeds[..i].contains(s)) {
            return bad("seed listed twice".into());
        }
        let m = &self.model;
        if m.dim == 0 || m.batch_size == 0 || m.epochs == 0 {
            return bad("model dim, batch_size and epochs must be positive".into());
        }
        if !m.learning_rate.is_finite() || m.learning_rate < 0.0 {
            return bad("learning_rate must be finite and non-negative".into());
        }
        if self.identity_top_k == Some(0) {
            return bad("identity_top_k must be positive".into());
        }
        Ok(())
    }

    pub fn seeds_or(&self, default_seed: u64) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![default_seed]
        } else {
            self.seeds.clone()
        }
    }

    fn noise_options(&self) -> NoiseOptions {
        let mut o = NoiseOptions::default();
        if let Some(k) = self.identity_top_k {
            o.identity_top_k = k;
        }
        o
    }
}

/// Directory-safe rendering of a rate as a percentage: `0`, `25`, `12.5`.
pub fn run_slug(rate: f64) -> String {
    let p = report::percent(rate);
    let p = p.trim_end_matches('%');
    if p.contains('.') {
        p.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        p.to_string()
    }
}

pub fn run_id(name: &str, seed: u64, rate: f64) -> String {
    format!("{name}-seed{seed}-noise{}", run_slug(rate))
}

fn seed_dir(seed: u64) -> String {
    format!("seed-{seed}")
}

fn run_dir(seed: u64, rate: f64) -> String {
    format!("{}/noise-{}", seed_dir(seed), run_slug(rate))
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> StudyError + '_ {
    move |e| StudyError::data_at(path, e)
}

fn write_text(path: &Path, text: &str) -> Result<(), StudyError> {
    std::fs::write(path, text).map_err(io_at(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StudyError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| StudyError::data_at(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

/// Metric trajectories and score curves of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub series: Vec<MetricSeries>,
    pub curves: Vec<ScoreCurve>,
}

pub fn analyze(trace: &RunTrace, task: Task) -> Result<Analysis, StudyError> {
    let series = metrics::task_metrics(trace, task)?;
    let curves = Split::ALL
        .iter()
        .filter(|&&s| trace.has_split(s))
        .map(|&s| metrics::score_curve(trace, s))
        .collect::<Result<_, _>>()?;
    Ok(Analysis { series, curves })
}

/// Writes `metrics.csv` and `scores.csv` into `dir`.
pub fn write_analysis(analysis: &Analysis, dir: &Path) -> Result<Vec<PathBuf>, StudyError> {
    let metrics_path = dir.join("metrics.csv");
    let scores_path = dir.join("scores.csv");
    report::emit_csv(&analysis.series, &metrics_path)?;
    report::emit_csv(&analysis.curves, &scores_path)?;
    Ok(vec![metrics_path, scores_path])
}

/// Charts for one set of runs: one per metric plus one score-curve chart
/// per split.
pub fn write_plots(analyses: &[&Analysis], dir: &Path) -> Result<Vec<PathBuf>, StudyError> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    let mut files = Vec::new();
    let mut names: Vec<&str> = Vec::new();
    for a in analyses {
        for s in &a.series {
            if !names.contains(&s.metric.as_str()) {
                names.push(&s.metric);
            }
        }
    }
    for name in names {
        let lines: Vec<PlotSeries> = analyses
            .iter()
            .flat_map(|a| a.series.iter().filter(|s| s.metric == name))
            .flat_map(PlotSeries::from_metric)
            .collect();
        let path = dir.join(format!("{name}.svg"));
        report::emit_plot(name, &lines, PlotStyle::Trajectory, &path)?;
        files.push(path);
    }
    for split in Split::ALL {
        let lines: Vec<PlotSeries> = analyses
            .iter()
            .flat_map(|a| a.curves.iter().filter(|c| c.split == split))
            .map(PlotSeries::from_curve)
            .collect();
        if lines.is_empty() {
            continue;
        }
        let path = dir.join(format!("scores-{}.svg", split.as_str()));
        report::emit_plot(&format!("mean {} score", split.as_str()), &lines, PlotStyle::Curve, &path)?;
        files.push(path);
    }
    Ok(files)
}

/// Output of one (seed, rate) pipeline.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub noise_rate: f64,
    pub run_id: String,
    pub analysis: Analysis,
    pub csr: Vec<CsrEntry>,
    pub files: Vec<PathBuf>,
}

impl RunOutput {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            run_id: self.run_id.clone(),
            noise_rate: self.noise_rate,
            series: self.analysis.series.clone(),
            heldout_score_median: self
                .analysis
                .curves
                .iter()
                .find(|c| c.split == Split::Heldout)
                .and_then(ScoreCurve::median),
            csr: self.csr.last().map(|e| e.report.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub runs: Vec<RunOutput>,
    /// Every file written, relative to the study directory, sorted.
    pub files: Vec<String>,
}

struct Inputs<'a> {
    manifest: &'a StudyManifest,
    train: &'a Corpus,
    heldout: &'a Corpus,
    out: &'a Path,
}

fn run_pipeline(inputs: &Inputs<'_>, seed: u64, rate: f64) -> Result<RunOutput, StudyError> {
    let m = inputs.manifest;
    let dir = inputs.out.join(run_dir(seed, rate));
    std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    let id = run_id(&m.name, seed, rate);

    let plan = noising::plan_noise_with(inputs.train, rate, m.noise_mode, seed, &m.noise_options())?;
    let noisy = noising::apply(inputs.train, &plan)?;
    let noisy_path = dir.join("noisy.jsonl");
    write_corpus(&noisy, &noisy_path)?;
    let manifest_path = dir.join("noise_manifest.json");
    plan.manifest(inputs.train).write(&manifest_path)?;

    let cfg = &m.model;
    let mut model = RefModel::for_corpora(&noisy, inputs.heldout, cfg.dim, cfg.min_count, seed)?;
    let hyper = cfg.hyper(seed);
    let label = RunLabel {
        run_id: id.clone(),
        noise_rate: rate,
        noise_mode: m.noise_mode.as_str().to_string(),
    };
    let trace_path = dir.join("trace.jsonl");
    let mut sink = JsonlSink::create(&trace_path)?;
    let mut csr_entries = Vec::new();
    let mut csr_failure = None;
    let probe = |model: &RefModel, epoch: usize| -> Result<CsrEntry, StudyError> {
        let opts = CsrOptions {
            budget: m.csr.and_then(|c| c.budget),
            workers: 1,
        };
        Ok(CsrEntry {
            run_id: id.clone(),
            noise_rate: rate,
            epoch,
            report: csr::csr(inputs.heldout, model, &opts)?,
        })
    };
    let every_epoch = m.csr.is_some_and(|c| c.every_epoch);
    let trained = model.train_observed(&noisy, inputs.heldout, &hyper, &label, &mut sink, &mut |epoch, model| {
        if every_epoch && csr_failure.is_none() {
            match probe(model, epoch) {
                Ok(e) => csr_entries.push(e),
                Err(e) => csr_failure = Some(e),
            }
        }
        Ok(())
    });
    drop(sink);
    trained?;
    if let Some(e) = csr_failure {
        return Err(e);
    }
    let model_path = dir.join("model.json");
    model
        .save(&model_path, Some(&hyper))
        .map_err(|e| StudyError::data_at(&model_path, e))?;
    if m.csr.is_some() && !every_epoch {
        csr_entries.push(probe(&model, cfg.epochs - 1)?);
    }

    let trace = telemetry::read_trace(&trace_path)?;
    let analysis = analyze(&trace, m.task)?;
    let mut files = vec![noisy_path, manifest_path, trace_path, model_path];
    files.extend(write_analysis(&analysis, &dir)?);
    if m.csr.is_some() {
        let csr_path = dir.join("csr.json");
        write_json(&csr_path, &csr_entries)?;
        files.push(csr_path);
    }
    Ok(RunOutput {
        seed,
        noise_rate: rate,
        run_id: id,
        analysis,
        csr: csr_entries,
        files,
    })
}

fn relative(out: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(out).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Seed-level tables, charts and the summary document. Shared by
/// `run_study` and by re-rendering existing traces.
fn finish(manifest: &StudyManifest, seeds: &[u64], runs: Vec<RunOutput>, out: &Path) -> Result<StudyOutcome, StudyError> {
    let mut files: Vec<PathBuf> = runs.iter().flat_map(|r| r.files.iter().cloned()).collect();
    let mut docs = Vec::new();
    for &seed in seeds {
        let mine: Vec<&RunOutput> = runs.iter().filter(|r| r.seed == seed).collect();
        let dir = out.join(seed_dir(seed));
        std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        let series: Vec<MetricSeries> = mine.iter().flat_map(|r| r.analysis.series.iter().cloned()).collect();
        let curves: Vec<ScoreCurve> = mine.iter().flat_map(|r| r.analysis.curves.iter().cloned()).collect();
        files.extend(write_analysis(&Analysis { series, curves }, &dir)?);
        if manifest.csr.is_some() {
            let entries: Vec<CsrEntry> = mine.iter().flat_map(|r| r.csr.iter().cloned()).collect();
            let path = dir.join("csr.csv");
            report::emit_csv(&entries, &path)?;
            files.push(path);
        }
        let analyses: Vec<&Analysis> = mine.iter().map(|r| &r.analysis).collect();
        files.extend(write_plots(&analyses, &dir.join("plots"))?);
        let summaries: Vec<RunSummary> = mine.iter().map(|r| r.summary()).collect();
        let title = format!("{} (seed {seed})", manifest.name);
        docs.push(report::study_summary(&title, &manifest.rates, &summaries, &[])?);
    }
    let mut rel: Vec<String> = files.iter().map(|p| relative(out, p)).collect();
    rel.push("study.json".into());
    rel.sort();
    rel.dedup();

    let mut doc = format!(
        "# study {}\n\ntask {}, noise mode {}, layout version {LAYOUT_VERSION}\n\n",
        manifest.name, manifest.task, manifest.noise_mode
    );
    for d in docs {
        // demote each per-seed document by one heading level
        for line in d.lines() {
            if line.starts_with('#') {
                doc.push('#');
            }
            doc.push_str(line);
            doc.push('\n');
        }
    }
    doc.push_str("## files\n\n");
    for f in &rel {
        doc.push_str(&format!("- {f}\n"));
    }
    write_text(&out.join("summary.md"), &doc)?;
    Ok(StudyOutcome { runs, files: rel })
}

fn load_inputs(manifest: &StudyManifest, base: &Path) -> Result<(Corpus, Corpus), StudyError> {
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let train = load_corpus(&resolve(&manifest.train_corpus), manifest.task)?;
    let heldout = load_corpus(&resolve(&manifest.heldout_corpus), manifest.task)?;
    if train.is_empty() {
        return Err(StudyError::data_at(&manifest.train_corpus, "train corpus is empty"));
    }
    if heldout.is_empty() {
        return Err(StudyError::data_at(&manifest.heldout_corpus, "held-out corpus is empty"));
    }
    Ok((train, heldout))
}

fn clear_marker(dir: &Path) -> Result<(), StudyError> {
    let marker = dir.join(FAILED);
    match std::fs::remove_file(&marker) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(StudyError::data_at(&marker, e)),
    }
}

fn mark_failed(dir: &Path, record: &ErrorRecord) {
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = write_json(&dir.join(FAILED), record);
    }
}

/// Runs every (seed, rate) pipeline, at most `workers` at a time.
///
/// On failure the remaining pipelines still finish, each failed run
/// directory and the study root get a `FAILED` marker holding the error
/// record, and the first failure in (seed, rate) order is returned.
pub fn run_study(
    manifest: &StudyManifest,
    base: &Path,
    out: &Path,
    default_seed: u64,
    workers: usize,
) -> Result<StudyOutcome, StudyError> {
    manifest.validate()?;
    std::fs::create_dir_all(out).map_err(io_at(out))?;
    clear_marker(out)?;
    let result = (|| {
        let (train, heldout) = load_inputs(manifest, base)?;
        write_json(&out.join("study.json"), manifest)?;
        let seeds = manifest.seeds_or(default_seed);
        let jobs: Vec<(u64, f64)> = seeds
            .iter()
            .flat_map(|&s| manifest.rates.iter().map(move |&r| (s, r)))
            .collect();
        for &(s, r) in &jobs {
            clear_marker(&out.join(run_dir(s, r)))?;
        }
        let inputs = Inputs {
            manifest,
            train: &train,
            heldout: &heldout,
            out,
        };
        let threads = workers.clamp(1, jobs.len());
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| StudyError::Config(format!("worker pool: {e}")))?;
        let results: Vec<Result<RunOutput, StudyError>> =
            pool.install(|| jobs.par_iter().map(|&(s, r)| run_pipeline(&inputs, s, r)).collect());

        let mut runs = Vec::new();
        let mut first = None;
        for (&(s, r), res) in jobs.iter().zip(results) {
            match res {
                Ok(run) => runs.push(run),
                Err(e) => {
                    mark_failed(&out.join(run_dir(s, r)), &e.record(Some(&run_id(&manifest.name, s, r))));
                    first.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first {
            return Err(e);
        }
        finish(manifest, &seeds, runs, out)
    })();
    if let Err(e) = &result {
        mark_failed(out, &e.record(None));
    }
    result
}

/// Rebuilds metrics, charts and the summary from the traces of an
/// existing study directory, without retraining.
pub fn reanalyze(out: &Path, default_seed: u64) -> Result<StudyOutcome, StudyError> {
    let manifest_path = out.join("study.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| StudyError::data_at(&manifest_path, e))?;
    let manifest = StudyManifest::from_json(&text)?;
    manifest.validate()?;
    let seeds = manifest.seeds_or(default_seed);
    let mut runs = Vec::new();
    for &seed in &seeds {
        for &rate in &manifest.rates {
            let dir = out.join(run_dir(seed, rate));
            let trace_path = dir.join("trace.jsonl");
            let trace = telemetry::read_trace(&trace_path)?;
            let analysis = analyze(&trace, manifest.task)?;
            let mut files: Vec<PathBuf> = ["noisy.jsonl", "noise_manifest.json", "trace.jsonl", "model.json"]
                .iter()
                .map(|f| dir.join(f))
                .filter(|p| p.exists())
                .collect();
            files.extend(write_analysis(&analysis, &dir)?);
            let csr_path = dir.join("csr.json");
            let csr = if csr_path.exists() {
                let text = std::fs::read_to_string(&csr_path).map_err(io_at(&csr_path))?;
                files.push(csr_path.clone());
                serde_json::from_str(&text).map_err(|e| StudyError::data_at(&csr_path, e))?
            } else {
                Vec::new()
            };
            runs.push(RunOutput {
                seed,
                noise_rate: rate,
                run_id: trace.run_id().to_string(),
                analysis,
                csr,
                files,
            });
        }
    }
    finish(&manifest, &seeds, runs, out)
}
