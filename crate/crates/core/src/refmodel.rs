//! Bag-of-sub-tokens linear softmax classifier.
//!
//! The code vector is the mean embedding of the input's sub-tokens and
//! class logits are its dot products with one output row per label. The
//! embedding width `dim` is the capacity knob. Training is plain
//! mini-batch gradient descent on cross-entropy, single-threaded, with a
//! fixed shuffle stream, so a seed determines every weight bit for bit.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample, Task};
use crate::metrics::{self, LOG_EPSILON};
use crate::rng;
use crate::subtoken;
use crate::telemetry::{Output, Split, TelemetryError, TelemetryRecord, TraceSink};

pub const UNK: usize = 0;
pub const PAD: usize = 1;
const UNK_TOKEN: &str = "<unk>";
const PAD_TOKEN: &str = "<pad>";
const INIT_SCALE: f64 = 0.05;
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("feature index {0} is outside the vocabulary")]
    IndexOutOfVocab(usize),
    #[error("label `{0}` is not in the model's catalogue")]
    UnknownLabel(String),
    #[error("the reference model does not train {0} corpora")]
    UnsupportedTask(Task),
    #[error("corpus task {found} does not match model task {expected}")]
    TaskMismatch { expected: Task, found: Task },
    #[error("loss diverged at epoch {epoch} on sample `{sample}`")]
    DivergedLoss { epoch: usize, sample: String },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

/// Sub-token vocabulary. Index 0 is UNK, 1 is PAD, the rest ordered by
/// descending frequency then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    min_count: usize,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            min_count,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn get(&self, subtoken: &str) -> Option<usize> {
        self.index.get(subtoken).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// Index of `subtoken`, UNK when absent.
    pub fn lookup(&self, subtoken: &str) -> usize {
        self.get(subtoken).unwrap_or(UNK)
    }
}

/// Input tokens the model sees: the query (code search only) followed by
/// the code. Targets are never part of the input.
pub fn input_tokens(sample: &Sample) -> impl Iterator<Item = &String> {
    sample.query_tokens.iter().chain(sample.tokens.iter())
}

pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Result<Vocab, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in corpus.samples() {
        for t in input_tokens(s) {
            for part in subtoken::split(t) {
                *counts.entry(part).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> =
        counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens = vec![UNK_TOKEN.to_string(), PAD_TOKEN.to_string()];
    tokens.extend(ranked.into_iter().map(|(t, _)| t));
    Ok(Vocab::from_tokens(tokens, min_count))
}

/// A sub-token multiset as sorted `(index, count)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Features {
    counts: Vec<(usize, u32)>,
    total: u32,
}

impl Features {
    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        let mut map: BTreeMap<usize, u32> = BTreeMap::new();
        for i in indices {
            *map.entry(i).or_default() += 1;
        }
        let total = map.values().sum();
        Self {
            counts: map.into_iter().collect(),
            total,
        }
    }

    pub fn counts(&self) -> &[(usize, u32)] {
        &self.counts
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Indices with multiplicity, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.counts
            .iter()
            .flat_map(|&(i, c)| std::iter::repeat_n(i, c as usize))
            .collect()
    }

    /// An empty multiset is fed to the model as a single PAD.
    fn effective(&self) -> std::borrow::Cow<'_, Features> {
        if self.is_empty() {
            std::borrow::Cow::Owned(Features {
                counts: vec![(PAD, 1)],
                total: 1,
            })
        } else {
            std::borrow::Cow::Borrowed(self)
        }
    }
}

pub fn featurize_tokens<'a, I>(tokens: I, vocab: &Vocab) -> Features
where
    I: IntoIterator<Item = &'a String>,
{
    Features::from_indices(
        tokens
            .into_iter()
            .flat_map(|t| subtoken::split(t))
            .map(|p| vocab.lookup(&p)),
    )
}

pub fn featurize(sample: &Sample, vocab: &Vocab) -> Features {
    featurize_tokens(input_tokens(sample), vocab)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

/// Telemetry labels attached to every record a training run emits.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLabel {
    pub run_id: String,
    pub noise_rate: f64,
    pub noise_mode: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub label: String,
    pub score: f64,
}

/// Gradient of the loss of one sample: sparse embedding rows plus the
/// dense output table.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub embedding_rows: Vec<(usize, Vec<f64>)>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefModel {
    task: Task,
    dim: usize,
    seed: u64,
    vocab: Vocab,
    labels: Vec<String>,
    /// `vocab.len() × dim`, row-major.
    embeddings: Vec<f64>,
    /// `labels.len() × dim`, row-major.
    output: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: RefModel,
    hyper: Option<TrainConfig>,
}

impl RefModel {
    /// Weights drawn uniformly from [−0.05, 0.05].
    pub fn new(task: Task, vocab: Vocab, labels: Vec<String>, dim: usize, seed: u64) -> Self {
        let mut model = Self::zeros(task, vocab, labels, dim, seed);
        let mut r = rng::seeded(rng::derive(seed, "init"));
        for w in model.embeddings.iter_mut().chain(model.output.iter_mut()) {
            *w = r.gen_range(-INIT_SCALE..=INIT_SCALE);
        }
        model
    }

    pub fn zeros(task: Task, vocab: Vocab, labels: Vec<String>, dim: usize, seed: u64) -> Self {
        Self {
            task,
            dim,
            seed,
            embeddings: vec![0.0; vocab.len() * dim],
            output: vec![0.0; labels.len() * dim],
            vocab,
            labels,
        }
    }

    /// Vocabulary from `train`, label catalogue from both corpora.
    pub fn for_corpora(
        train: &Corpus,
        heldout: &Corpus,
        dim: usize,
        min_count: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let task = train.task();
        if !matches!(task, Task::MethodName | Task::CodeSearch) {
            return Err(ModelError::UnsupportedTask(task));
        }
        if heldout.task() != task {
            return Err(ModelError::TaskMismatch {
                expected: task,
                found: heldout.task(),
            });
        }
        let vocab = build_vocab(train, min_count)?;
        let labels: BTreeSet<String> = match task {
            Task::CodeSearch => ["0", "1"].iter().map(|s| s.to_string()).collect(),
            _ => train
                .label_pool()
                .iter()
                .chain(heldout.label_pool())
                .cloned()
                .collect(),
        };
        Ok(Self::new(task, vocab, labels.into_iter().collect(), dim, seed))
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn param_count(&self) -> usize {
        self.dim * (self.vocab.len() + self.labels.len())
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn embeddings_mut(&mut self) -> &mut [f64] {
        &mut self.embeddings
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.output
    }

    pub fn output_weights_mut(&mut self) -> &mut [f64] {
        &mut self.output
    }

    pub fn class_of(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    fn check(&self, features: &Features) -> Result<(), ModelError> {
        match features.counts.iter().find(|(i, _)| *i >= self.vocab.len()) {
            Some(&(i, _)) => Err(ModelError::IndexOutOfVocab(i)),
            None => Ok(()),
        }
    }

    fn code_vector(&self, features: &Features) -> Vec<f64> {
        let f = features.effective();
        let d = self.dim;
        let mut h = vec![0.0; d];
        for &(i, c) in &f.counts {
            let row = &self.embeddings[i * d..(i + 1) * d];
            let c = f64::from(c);
            for (hk, &e) in h.iter_mut().zip(row) {
                *hk += c * e;
            }
        }
        let total = f64::from(f.total);
        for hk in h.iter_mut() {
            *hk /= total;
        }
        h
    }

    fn logits_from(&self, h: &[f64]) -> Vec<f64> {
        self.output
            .chunks_exact(self.dim)
            .map(|w| w.iter().zip(h).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn forward(&self, features: &Features) -> Result<Vec<f64>, ModelError> {
        self.check(features)?;
        Ok(self.logits_from(&self.code_vector(features)))
    }

    fn probs(&self, features: &Features) -> Vec<f64> {
        let logits = self.logits_from(&self.code_vector(features));
        metrics::softmax_probs(&logits).unwrap_or_else(|_| vec![f64::NAN; logits.len()])
    }

    /// Unfloored negative log-likelihood of `target`.
    pub fn loss(&self, features: &Features, target: usize) -> Result<f64, ModelError> {
        self.check(features)?;
        let logits = self.logits_from(&self.code_vector(features));
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        Ok(log_z - logits[target])
    }

    /// Analytic gradient of [`RefModel::loss`].
    pub fn gradient(&self, features: &Features, target: usize) -> Result<Gradient, ModelError> {
        self.check(features)?;
        let d = self.dim;
        let h = self.code_vector(features);
        let mut delta = self.probs(features);
        delta[target] -= 1.0;

        let mut output = vec![0.0; self.output.len()];
        let mut g = vec![0.0; d];
        for (k, &dk) in delta.iter().enumerate() {
            let w = &self.output[k * d..(k + 1) * d];
            let gw = &mut output[k * d..(k + 1) * d];
            for j in 0..d {
                gw[j] = dk * h[j];
                g[j] += dk * w[j];
            }
        }
        let f = features.effective();
        let total = f64::from(f.total);
        let embedding_rows = f
            .counts
            .iter()
            .map(|&(i, c)| {
                let scale = f64::from(c) / total;
                (i, g.iter().map(|x| x * scale).collect())
            })
            .collect();
        Ok(Gradient {
            embedding_rows,
            output,
        })
    }

    fn predict_features(&self, features: &Features) -> Prediction {
        let probs = self.probs(features);
        let mut best = 0;
        for (k, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = k;
            }
        }
        Prediction {
            class: best,
            label: self.labels.get(best).cloned().unwrap_or_default(),
            score: probs.get(best).copied().unwrap_or(0.0),
        }
    }

    /// Argmax label for a raw token sequence; ties go to the lowest class.
    pub fn predict(&self, tokens: &[String]) -> Prediction {
        self.predict_features(&featurize_tokens(tokens, &self.vocab))
    }

    pub fn predict_sample(&self, sample: &Sample) -> Prediction {
        self.predict_features(&featurize(sample, &self.vocab))
    }

    /// Trains in place, emitting one record per train and held-out sample
    /// after every epoch.
    pub fn train(
        &mut self,
        train: &Corpus,
        heldout: &Corpus,
        hyper: &TrainConfig,
        label: &RunLabel,
        sink: &mut dyn TraceSink,
    ) -> Result<(), ModelError> {
        self.train_observed(train, heldout, hyper, label, sink, &mut |_, _| Ok(()))
    }

    /// Like [`RefModel::train`], calling `observer` with the model after
    /// each epoch's telemetry is written.
    pub fn train_observed(
        &mut self,
        train: &Corpus,
        heldout: &Corpus,
        hyper: &TrainConfig,
        label: &RunLabel,
        sink: &mut dyn TraceSink,
        observer: &mut dyn FnMut(usize, &RefModel) -> Result<(), ModelError>,
    ) -> Result<(), ModelError> {
        if hyper.batch_size == 0 {
            return Err(ModelError::InvalidHyper("batch_size must be positive".into()));
        }
        if !hyper.learning_rate.is_finite() || hyper.learning_rate < 0.0 {
            return Err(ModelError::InvalidHyper("learning_rate must be finite and >= 0".into()));
        }
        let train_set = self.encode(train)?;
        let heldout_set = self.encode(heldout)?;
        let d = self.dim;
        let mut shuffle = rng::seeded(rng::derive(hyper.seed, "shuffle"));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut grad_e = vec![0.0; self.embeddings.len()];
        let mut grad_w = vec![0.0; self.output.len()];
        let mut touched: Vec<usize> = Vec::new();
        let mut seen = vec![false; self.vocab.len()];

        for epoch in 0..hyper.epochs {
            order.shuffle(&mut shuffle);
            for batch in order.chunks(hyper.batch_size) {
                for &i in batch {
                    let (_, features, target) = &train_set[i];
                    let g = self.gradient(features, *target)?;
                    for (acc, x) in grad_w.iter_mut().zip(&g.output) {
                        *acc += x;
                    }
                    for (row, values) in g.embedding_rows {
                        if !std::mem::replace(&mut seen[row], true) {
                            touched.push(row);
                        }
                        for (acc, x) in grad_e[row * d..(row + 1) * d].iter_mut().zip(&values) {
                            *acc += x;
                        }
                    }
                }
                let step = hyper.learning_rate / batch.len() as f64;
                for (w, g) in self.output.iter_mut().zip(grad_w.iter_mut()) {
                    *w -= step * *g;
                    *g = 0.0;
                }
                for &row in &touched {
                    let span = row * d..(row + 1) * d;
                    for (w, g) in self.embeddings[span.clone()].iter_mut().zip(&mut grad_e[span]) {
                        *w -= step * *g;
                        *g = 0.0;
                    }
                    seen[row] = false;
                }
                touched.clear();
            }
            self.emit_epoch(epoch, Split::Train, &train_set, label, sink)?;
            self.emit_epoch(epoch, Split::Heldout, &heldout_set, label, sink)?;
            sink.flush()?;
            observer(epoch, self)?;
        }
        Ok(())
    }

    fn encode<'c>(&self, corpus: &'c Corpus) -> Result<Vec<(&'c Sample, Features, usize)>, ModelError> {
        if corpus.task() != self.task {
            return Err(ModelError::TaskMismatch {
                expected: self.task,
                found: corpus.task(),
            });
        }
        corpus
            .samples()
            .iter()
            .map(|s| {
                let class = self
                    .class_of(&s.target_label)
                    .ok_or_else(|| ModelError::UnknownLabel(s.target_label.clone()))?;
                Ok((s, featurize(s, &self.vocab), class))
            })
            .collect()
    }

    fn emit_epoch(
        &self,
        epoch: usize,
        split: Split,
        set: &[(&Sample, Features, usize)],
        label: &RunLabel,
        sink: &mut dyn TraceSink,
    ) -> Result<(), ModelError> {
        for (sample, features, target) in set {
            let probs = self.probs(features);
            let loss = metrics::cross_entropy(*target, &probs).unwrap_or(f64::NAN);
            // the log floor hides NaN probabilities, so check them directly
            if !loss.is_finite() || probs.iter().any(|p| !p.is_finite()) {
                return Err(ModelError::DivergedLoss {
                    epoch,
                    sample: sample.id.clone(),
                });
            }
            let pred = self.predict_features(features);
            sink.append(&TelemetryRecord {
                run_id: label.run_id.clone(),
                noise_rate: label.noise_rate,
                noise_mode: label.noise_mode.clone(),
                epoch,
                split,
                sample_id: sample.id.clone(),
                loss,
                loc_loss: None,
                rep_loss: None,
                predicted: Output::Label(pred.label.clone()),
                score: pred.score.clamp(0.0, 1.0),
                correct: pred.class == *target,
                target: Output::Label(sample.target_label.clone()),
                var_misuse: None,
            })?;
        }
        Ok(())
    }

    /// Mean training loss, floored like the telemetry.
    pub fn mean_loss(&self, corpus: &Corpus) -> Result<f64, ModelError> {
        let set = self.encode(corpus)?;
        if set.is_empty() {
            return Err(ModelError::EmptyCorpus);
        }
        let total: f64 = set
            .iter()
            .map(|(_, f, t)| self.probs(f)[*t].max(LOG_EPSILON).ln())
            .sum();
        Ok(-total / set.len() as f64)
    }

    /// Fraction of samples whose argmax equals the label.
    pub fn accuracy(&self, corpus: &Corpus) -> Result<f64, ModelError> {
        let set = self.encode(corpus)?;
        if set.is_empty() {
            return Err(ModelError::EmptyCorpus);
        }
        let hits = set
            .iter()
            .filter(|(_, f, t)| self.predict_features(f).class == *t)
            .count();
        Ok(hits as f64 / set.len() as f64)
    }

    pub fn save(&self, path: &Path, hyper: Option<&TrainConfig>) -> Result<(), ModelError> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            model: self.clone(),
            hyper: hyper.copied(),
        };
        let text = serde_json::to_string(&ckpt).map_err(|e| ModelError::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<TrainConfig>), ModelError> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| ModelError::Format(e.to_string()))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        let mut model = ckpt.model;
        model.vocab = Vocab::from_tokens(std::mem::take(&mut model.vocab.tokens), model.vocab.min_count);
        let d = model.dim;
        if model.embeddings.len() != model.vocab.len() * d || model.output.len() != model.labels.len() * d
        {
            return Err(ModelError::Format("weight table shapes do not match".into()));
        }
        if model.embeddings.iter().chain(&model.output).any(|w| !w.is_finite()) {
            return Err(ModelError::Format("non-finite weight".into()));
        }
        Ok((model, ckpt.hyper))
    }
}
