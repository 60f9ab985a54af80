//! Per-epoch, per-sample observation stream.
//!
//! A trace is JSON Lines, one [`TelemetryRecord`] per line. The reference
//! trainer writes it, and external trainers can emit the same keys. Floats
//! are written in shortest round-trip form, so reading a trace back
//! reproduces every value bit for bit.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

const LOSS_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum TelemetryError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("epoch {epoch} {split} covers a different sample set than epoch 0")]
    RaggedEpochs { epoch: usize, split: Split },
    #[error("epoch {epoch} out of range for a trace with {epoch_count} epochs")]
    OutOfRange { epoch: usize, epoch_count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Heldout];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Heldout => "heldout",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A predicted or target output: a label or a token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Output {
    Label(String),
    Tokens(Vec<String>),
}

impl Output {
    pub fn as_label(&self) -> Option<&str> {
        match self {
            Output::Label(s) => Some(s),
            Output::Tokens(_) => None,
        }
    }

    /// Tokens of a sequence output; a label is treated as one token.
    pub fn tokens(&self) -> Vec<String> {
        match self {
            Output::Label(s) => vec![s.clone()],
            Output::Tokens(t) => t.clone(),
        }
    }
}

impl From<&str> for Output {
    fn from(s: &str) -> Self {
        Output::Label(s.to_string())
    }
}

/// Localization and repair outcome of one var-misuse prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarMisuseOutcome {
    pub is_buggy: bool,
    /// Argmax of the localization distribution.
    pub predicted_location: usize,
    pub actual_location: usize,
    /// Repair probability summed over occurrences of the correct variable.
    pub repair_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub run_id: String,
    pub noise_rate: f64,
    pub noise_mode: String,
    pub epoch: usize,
    pub split: Split,
    pub sample_id: String,
    pub loss: f64,
    #[serde(default)]
    pub loc_loss: Option<f64>,
    #[serde(default)]
    pub rep_loss: Option<f64>,
    pub predicted: Output,
    pub score: f64,
    pub correct: bool,
    pub target: Output,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var_misuse: Option<VarMisuseOutcome>,
}

impl TelemetryRecord {
    pub fn validate(&self) -> Result<(), TelemetryError> {
        let bad = |m: String| Err(TelemetryError::InvariantViolation(m));
        if !(self.score.is_finite() && (0.0..=1.0).contains(&self.score)) {
            return bad(format!("score {} outside [0, 1]", self.score));
        }
        if !(self.loss.is_finite() && self.loss >= 0.0) {
            return bad(format!("loss {} is not a non-negative real", self.loss));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} outside [0, 1]", self.noise_rate));
        }
        for (name, part) in [("loc_loss", self.loc_loss), ("rep_loss", self.rep_loss)] {
            if let Some(v) = part {
                if !(v.is_finite() && v >= 0.0) {
                    return bad(format!("{name} {v} is not a non-negative real"));
                }
            }
        }
        match (self.loc_loss, self.rep_loss) {
            (Some(l), Some(r)) if (self.loss - (l + r)).abs() > LOSS_SUM_TOLERANCE => bad(format!(
                "loss {} != loc_loss {} + rep_loss {}",
                self.loss, l, r
            )),
            (Some(_), None) | (None, Some(_)) => {
                bad("loc_loss and rep_loss must be given together".into())
            }
            _ => Ok(()),
        }
    }
}

/// Destination for telemetry records.
pub trait TraceSink {
    /// Writes an already validated record.
    fn write_record(&mut self, record: &TelemetryRecord) -> Result<(), TelemetryError>;

    fn flush(&mut self) -> Result<(), TelemetryError> {
        Ok(())
    }

    /// Validates and writes a record.
    fn append(&mut self, record: &TelemetryRecord) -> Result<(), TelemetryError> {
        record.validate()?;
        self.write_record(record)
    }
}

/// Validates `record` and appends it to `sink`.
pub fn append(record: &TelemetryRecord, sink: &mut dyn TraceSink) -> Result<(), TelemetryError> {
    sink.append(record)
}

/// JSON Lines file sink.
pub struct JsonlSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlSink {
    /// Creates (truncating) a trace file.
    pub fn create(path: &Path) -> Result<Self, TelemetryError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    /// Opens a trace file for appending.
    pub fn open_append(path: &Path) -> Result<Self, TelemetryError> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }
}

impl TraceSink for JsonlSink {
    fn write_record(&mut self, record: &TelemetryRecord) -> Result<(), TelemetryError> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.out, "{line}").map_err(|e| io_err(&self.path, e))
    }

    fn flush(&mut self) -> Result<(), TelemetryError> {
        self.out.flush().map_err(|e| io_err(&self.path, e))
    }
}

impl Drop for JsonlSink {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<TelemetryRecord>,
}

impl TraceSink for MemorySink {
    fn write_record(&mut self, record: &TelemetryRecord) -> Result<(), TelemetryError> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Discards records after validation.
#[derive(Debug, Default)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn write_record(&mut self, _record: &TelemetryRecord) -> Result<(), TelemetryError> {
        Ok(())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> TelemetryError {
    TelemetryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Records of one run grouped by (epoch, split), each group sorted by
/// sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    run_id: String,
    noise_rate: f64,
    noise_mode: String,
    epoch_count: usize,
    groups: BTreeMap<(usize, Split), Vec<TelemetryRecord>>,
    universes: BTreeMap<Split, BTreeSet<String>>,
}

impl RunTrace {
    pub fn from_records(records: Vec<TelemetryRecord>) -> Result<Self, TelemetryError> {
        let mut groups: BTreeMap<(usize, Split), Vec<TelemetryRecord>> = BTreeMap::new();
        let (run_id, noise_rate, noise_mode) = records
            .first()
            .map(|r| (r.run_id.clone(), r.noise_rate, r.noise_mode.clone()))
            .unwrap_or_default();

        for r in records {
            r.validate()?;
            if r.run_id != run_id {
                return Err(TelemetryError::InvariantViolation(format!(
                    "trace mixes runs `{run_id}` and `{}`",
                    r.run_id
                )));
            }
            groups.entry((r.epoch, r.split)).or_default().push(r);
        }

        let epochs: BTreeSet<usize> = groups.keys().map(|&(e, _)| e).collect();
        let epoch_count = epochs.len();
        if epochs.iter().copied().ne(0..epoch_count) {
            return Err(TelemetryError::InvariantViolation(format!(
                "epochs are not contiguous from 0: {epochs:?}"
            )));
        }

        let mut universes: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
        for ((epoch, split), group) in groups.iter_mut() {
            group.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
            if let Some(w) = group.windows(2).find(|w| w[0].sample_id == w[1].sample_id) {
                return Err(TelemetryError::InvariantViolation(format!(
                    "sample `{}` recorded twice in epoch {epoch} {split}",
                    w[0].sample_id
                )));
            }
            let ids: BTreeSet<String> = group.iter().map(|r| r.sample_id.clone()).collect();
            match universes.get(split) {
                None if *epoch == 0 => {
                    universes.insert(*split, ids);
                }
                Some(u) if *u == ids => {}
                _ => {
                    return Err(TelemetryError::RaggedEpochs {
                        epoch: *epoch,
                        split: *split,
                    })
                }
            }
        }
        for split in universes.keys() {
            if let Some(epoch) = (0..epoch_count).find(|e| !groups.contains_key(&(*e, *split))) {
                return Err(TelemetryError::RaggedEpochs {
                    epoch,
                    split: *split,
                });
            }
        }

        Ok(Self {
            run_id,
            noise_rate,
            noise_mode,
            epoch_count,
            groups,
            universes,
        })
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, TelemetryError> {
        let mut records = Vec::new();
        for (k, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| TelemetryError::SchemaViolation {
                line: k + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TelemetryRecord =
                serde_json::from_str(&line).map_err(|e| TelemetryError::SchemaViolation {
                    line: k + 1,
                    message: e.to_string(),
                })?;
            record.validate().map_err(|e| TelemetryError::SchemaViolation {
                line: k + 1,
                message: e.to_string(),
            })?;
            records.push(record);
        }
        Self::from_records(records)
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn noise_rate(&self) -> f64 {
        self.noise_rate
    }

    pub fn noise_mode(&self) -> &str {
        &self.noise_mode
    }

    pub fn epoch_count(&self) -> usize {
        self.epoch_count
    }

    pub fn is_empty(&self) -> bool {
        self.epoch_count == 0
    }

    pub fn has_split(&self, split: Split) -> bool {
        self.universes.contains_key(&split)
    }

    pub fn universe(&self, split: Split) -> Option<&BTreeSet<String>> {
        self.universes.get(&split)
    }

    pub fn total_records(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    /// Records of one (epoch, split) in sample-id order. A split the trace
    /// never recorded yields an empty slice.
    pub fn epoch_slice(&self, epoch: usize, split: Split) -> Result<&[TelemetryRecord], TelemetryError> {
        if epoch >= self.epoch_count {
            return Err(TelemetryError::OutOfRange {
                epoch,
                epoch_count: self.epoch_count,
            });
        }
        Ok(self
            .groups
            .get(&(epoch, split))
            .map(Vec::as_slice)
            .unwrap_or(&[]))
    }

    /// All records in (epoch, split, sample id) order.
    pub fn records(&self) -> impl Iterator<Item = &TelemetryRecord> {
        self.groups.values().flatten()
    }
}

pub fn read_trace(path: &Path) -> Result<RunTrace, TelemetryError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    RunTrace::from_jsonl(BufReader::new(file))
}
