//! Multi-task corpus schema and JSON Lines I/O.
//!
//! A corpus file holds one [`Sample`] per line with keys in declaration
//! order. Every sample is checked against its index invariants on load;
//! broken samples are rejected, never repaired.

mod lexer;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use lexer::{
    is_identifier, lex, normalize_source, normalize_source_with, segment_statements,
    NormalizerConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: schema violation in `{field}`: {message}")]
    SchemaViolation {
        line: usize,
        field: String,
        message: String,
    },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: expected task {expected}, found {found}")]
    TaskMismatch {
        line: usize,
        expected: Task,
        found: Task,
    },
    #[error("unbalanced delimiters at token {position}")]
    UnbalancedDelimiters { position: usize },
    #[error("no tokens survived lexing")]
    EmptyTokenStream,
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    MethodName,
    VarMisuse,
    CodeToText,
    CodeSearch,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::MethodName => "method_name",
            Task::VarMisuse => "var_misuse",
            Task::CodeToText => "code_to_text",
            Task::CodeSearch => "code_search",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "method_name" => Ok(Task::MethodName),
            "var_misuse" => Ok(Task::VarMisuse),
            "code_to_text" => Ok(Task::CodeToText),
            "code_search" => Ok(Task::CodeSearch),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// Half-open token range `[start, end)`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl From<(usize, usize)> for Span {
    fn from((start, end): (usize, usize)) -> Self {
        Span { start, end }
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

/// Bug annotation of a var-misuse sample. Location 0 means bug-free.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugMeta {
    pub is_buggy: bool,
    pub error_location: usize,
    pub repair_targets: BTreeSet<usize>,
}

impl BugMeta {
    pub fn bug_free() -> Self {
        Self {
            is_buggy: false,
            error_location: 0,
            repair_targets: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub task: Task,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub statements: Vec<Span>,
    #[serde(default)]
    pub variables: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub target_label: String,
    #[serde(default)]
    pub target_tokens: Vec<String>,
    #[serde(default)]
    pub bug_meta: Option<BugMeta>,
    #[serde(default)]
    pub query_tokens: Vec<String>,
}

type Violation = (&'static str, String);

impl Sample {
    /// Checks the index and task invariants. On failure returns the
    /// offending field and a description.
    pub fn validate(&self) -> Result<(), Violation> {
        let n = self.tokens.len();
        if self.id.is_empty() {
            return Err(("id", "empty id".into()));
        }

        let mut prev_end = 0;
        for (k, span) in self.statements.iter().enumerate() {
            if span.start >= span.end || span.end > n {
                return Err(("statements", format!("span {k} {:?} out of bounds", span)));
            }
            if span.start < prev_end {
                return Err(("statements", format!("span {k} overlaps or is out of order")));
            }
            prev_end = span.end;
        }

        for (name, occ) in &self.variables {
            if occ.is_empty() {
                return Err(("variables", format!("`{name}` has no occurrences")));
            }
            if occ.windows(2).any(|w| w[0] >= w[1]) {
                return Err(("variables", format!("`{name}` occurrences not strictly sorted")));
            }
            for &i in occ {
                if i >= n {
                    return Err(("variables", format!("`{name}` index {i} out of bounds")));
                }
                if self.tokens[i] != *name {
                    return Err((
                        "variables",
                        format!("`{name}` index {i} holds `{}`", self.tokens[i]),
                    ));
                }
            }
        }

        match (self.task, &self.bug_meta) {
            (Task::VarMisuse, None) => return Err(("bug_meta", "missing for var_misuse".into())),
            (Task::VarMisuse, Some(meta)) => {
                if meta.error_location >= n || meta.repair_targets.iter().any(|&i| i >= n) {
                    return Err(("bug_meta", "index out of bounds".into()));
                }
                if meta.is_buggy {
                    if meta.error_location == 0 {
                        return Err(("bug_meta", "buggy sample with error_location 0".into()));
                    }
                } else if meta.error_location != 0 || !meta.repair_targets.is_empty() {
                    return Err((
                        "bug_meta",
                        "bug-free sample must have error_location 0 and no repair targets".into(),
                    ));
                }
            }
            (_, Some(_)) => return Err(("bug_meta", "only var_misuse samples carry bug_meta".into())),
            (_, None) => {}
        }

        match self.task {
            Task::MethodName if self.target_label.is_empty() => {
                Err(("target_label", "empty method name".into()))
            }
            Task::CodeSearch if self.target_label != "0" && self.target_label != "1" => Err((
                "target_label",
                format!("code_search label must be \"0\" or \"1\", got `{}`", self.target_label),
            )),
            Task::CodeToText if self.target_tokens.is_empty() => {
                Err(("target_tokens", "empty docstring".into()))
            }
            _ => Ok(()),
        }
    }

    /// Distinct variable names ordered by first occurrence.
    pub fn variables_by_first_occurrence(&self) -> Vec<&str> {
        let mut names: Vec<(&str, usize)> = self
            .variables
            .iter()
            .filter_map(|(name, occ)| occ.first().map(|&i| (name.as_str(), i)))
            .collect();
        names.sort_by_key(|&(_, first)| first);
        names.into_iter().map(|(name, _)| name).collect()
    }

    /// Re-keys variable occurrences after in-place token edits so that
    /// every listed index again holds its key.
    pub(crate) fn resync_variables(&mut self) {
        let mut rebuilt: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for occ in self.variables.values() {
            for &i in occ {
                rebuilt.entry(self.tokens[i].clone()).or_default().push(i);
            }
        }
        for occ in rebuilt.values_mut() {
            occ.sort_unstable();
            occ.dedup();
        }
        self.variables = rebuilt;
    }
}

/// A validated single-task collection of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    task: Task,
    samples: Vec<Sample>,
    label_pool: BTreeSet<String>,
    docstring_pool: BTreeSet<Vec<String>>,
}

impl Corpus {
    /// Validates every sample and derives the label and docstring pools.
    /// Line numbers in errors are 1-based sample positions.
    pub fn new(task: Task, samples: Vec<Sample>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (k, s) in samples.iter().enumerate() {
            check_sample(task, s, k + 1)?;
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
        }
        let label_pool = samples.iter().map(|s| s.target_label.clone()).collect();
        let docstring_pool = samples.iter().map(|s| s.target_tokens.clone()).collect();
        Ok(Self {
            task,
            samples,
            label_pool,
            docstring_pool,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_pool(&self) -> &BTreeSet<String> {
        &self.label_pool
    }

    pub fn docstring_pool(&self) -> &BTreeSet<Vec<String>> {
        &self.docstring_pool
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    /// Serializes to JSON Lines, one sample per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("sample serialization is infallible"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl<R: BufRead>(reader: R, task: Task) -> Result<Self, CorpusError> {
        let mut samples = Vec::new();
        let mut seen = HashSet::new();
        for (k, line) in reader.lines().enumerate() {
            let lineno = k + 1;
            let line = line.map_err(|e| CorpusError::SchemaViolation {
                line: lineno,
                field: "<line>".into(),
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let sample: Sample =
                serde_json::from_str(&line).map_err(|e| CorpusError::SchemaViolation {
                    line: lineno,
                    field: serde_field(&e),
                    message: e.to_string(),
                })?;
            check_sample(task, &sample, lineno)?;
            if !seen.insert(sample.id.clone()) {
                return Err(CorpusError::DuplicateId(sample.id));
            }
            samples.push(sample);
        }
        Corpus::new(task, samples)
    }
}

fn check_sample(task: Task, s: &Sample, line: usize) -> Result<(), CorpusError> {
    if s.task != task {
        return Err(CorpusError::TaskMismatch {
            line,
            expected: task,
            found: s.task,
        });
    }
    s.validate()
        .map_err(|(field, message)| CorpusError::SchemaViolation {
            line,
            field: field.to_string(),
            message,
        })
}

fn serde_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    msg.split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<record>".to_string())
}

pub fn load_corpus(path: &Path, task: Task) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    Corpus::from_jsonl(BufReader::new(file), task)
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(corpus.to_jsonl().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CorpusError::io(path, e))
}
