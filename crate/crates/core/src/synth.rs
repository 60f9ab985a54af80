//! Synthetic method-name corpora for desk-scale studies.
//!
//! Every label owns a small set of topic words; identifiers in a method of
//! that label mix topic words with words from a shared pool. The mix ratio
//! `signal` sets how learnable the task is, while the shared pool makes
//! each method's bag of sub-tokens close to unique so that random labels
//! can still be fitted by a large enough model. Methods are rendered as
//! source text and go through the regular normalizer, with the header
//! name replaced by `f`.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_source, Corpus, CorpusError, Task};
use crate::rng::{self, StudyRng};

const LABELS: &[&str] = &[
    "getName",
    "setValue",
    "computeTotal",
    "parseInput",
    "sortItems",
    "findIndex",
    "readFile",
    "writeBuffer",
    "checkBounds",
    "resetState",
];

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
const TYPES: &[&str] = &["int", "long", "double", "String", "boolean"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// At most 10.
    pub labels: usize,
    pub train_per_label: usize,
    pub heldout_per_label: usize,
    pub topic_words: usize,
    pub shared_words: usize,
    /// Probability that an identifier word is a topic word of the label.
    pub signal: f64,
    pub min_statements: usize,
    pub max_statements: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            labels: 10,
            train_per_label: 200,
            heldout_per_label: 50,
            topic_words: 20,
            shared_words: 380,
            signal: 0.5,
            min_statements: 2,
            max_statements: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic corpus config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug)]
pub struct SynthCorpora {
    pub train: Corpus,
    pub heldout: Corpus,
}

/// Distinct lowercase pseudo-words of two or three syllables.
fn word_list(n: usize, r: &mut StudyRng) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(n);
    while words.len() < n {
        let syllables = r.gen_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(r).unwrap(), VOWELS.choose(r).unwrap()))
            .collect();
        // "var" is reserved for renamed variables
        if !w.starts_with("var") && seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

struct Vocabulary {
    topics: Vec<Vec<String>>,
    shared: Vec<String>,
}

impl Vocabulary {
    fn word(&self, class: usize, signal: f64, r: &mut StudyRng) -> String {
        if r.gen_bool(signal) {
            self.topics[class].choose(r).unwrap().clone()
        } else {
            self.shared.choose(r).unwrap().clone()
        }
    }

    /// camelCase identifier of one or two words.
    fn identifier(&self, class: usize, signal: f64, r: &mut StudyRng) -> String {
        let mut id = self.word(class, signal, r);
        if r.gen_bool(0.5) {
            let second = self.word(class, signal, r);
            let mut chars = second.chars();
            let head = chars.next().unwrap().to_ascii_uppercase();
            id.push(head);
            id.extend(chars);
        }
        id
    }
}

fn render_method(vocab: &Vocabulary, class: usize, cfg: &SynthConfig, r: &mut StudyRng) -> String {
    let sig = cfg.signal;
    let mut live: Vec<String> = Vec::new();
    let fresh = |live: &mut Vec<String>, r: &mut StudyRng| loop {
        let name = vocab.identifier(class, sig, r);
        if !live.contains(&name) {
            live.push(name.clone());
            return name;
        }
    };

    let params = r.gen_range(1..=2);
    let mut header = Vec::new();
    for _ in 0..params {
        let ty = TYPES.choose(r).unwrap();
        let p = fresh(&mut live, r);
        header.push(format!("{ty} {p}"));
    }
    let mut body = Vec::new();
    let statements = r.gen_range(cfg.min_statements..=cfg.max_statements);
    for _ in 0..statements {
        let a = live.choose(r).unwrap().clone();
        let b = live.choose(r).unwrap().clone();
        let call = vocab.identifier(class, sig, r);
        let stmt = match r.gen_range(0..4) {
            0 => {
                let ty = TYPES.choose(r).unwrap();
                let v = fresh(&mut live, r);
                format!("{ty} {v} = {a} + {b};")
            }
            1 => {
                let v = fresh(&mut live, r);
                format!("{v} = {call}({a}, {b});")
            }
            2 => format!("{call}({a});"),
            _ => format!("if ({a} > {b}) {{ {a} = {call}({b}); }}"),
        };
        body.push(stmt);
    }
    let ret = live.choose(r).unwrap();
    format!("void f({}) {{ {} return {ret}; }}", header.join(", "), body.join(" "))
}

/// Generates a train corpus and an independent held-out corpus.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpora, SynthError> {
    if cfg.labels == 0 || cfg.labels > LABELS.len() {
        return Err(SynthError::InvalidConfig(format!("labels must be in 1..={}", LABELS.len())));
    }
    if cfg.topic_words == 0 || cfg.shared_words == 0 {
        return Err(SynthError::InvalidConfig("word pools must be non-empty".into()));
    }
    if !(0.0..=1.0).contains(&cfg.signal) {
        return Err(SynthError::InvalidConfig("signal must be in [0, 1]".into()));
    }
    if cfg.min_statements > cfg.max_statements {
        return Err(SynthError::InvalidConfig("min_statements exceeds max_statements".into()));
    }

    let mut words_rng = rng::seeded(rng::derive(cfg.seed, "synth-words"));
    let mut all = word_list(cfg.labels * cfg.topic_words + cfg.shared_words, &mut words_rng);
    let shared = all.split_off(cfg.labels * cfg.topic_words);
    let topics = all.chunks(cfg.topic_words).map(<[String]>::to_vec).collect();
    let vocab = Vocabulary { topics, shared };

    let build = |stream: &str, per_label: usize, prefix: &str| -> Result<Corpus, SynthError> {
        let mut r = rng::seeded(rng::derive(cfg.seed, stream));
        let mut samples = Vec::with_capacity(per_label * cfg.labels);
        for i in 0..per_label * cfg.labels {
            let class = i % cfg.labels;
            let code = render_method(&vocab, class, cfg, &mut r);
            let mut s = normalize_source(&code, Task::MethodName, &format!("{prefix}{i:05}"))?;
            s.target_label = LABELS[class].to_string();
            samples.push(s);
        }
        Ok(Corpus::new(Task::MethodName, samples)?)
    };
    Ok(SynthCorpora {
        train: build("synth-train", cfg.train_per_label, "train-")?,
        heldout: build("synth-heldout", cfg.heldout_per_label, "heldout-")?,
    })
}
