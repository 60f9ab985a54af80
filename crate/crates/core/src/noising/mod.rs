//! Seeded output- and input-noise injection.
//!
//! A [`NoisePlan`] is built once per (corpus, rate, mode, seed): samples are
//! grouped into classes (buggy/correct for var-misuse, positive/negative
//! for code search, a single class otherwise), `round(rate × class size)`
//! are requested per class and drawn without replacement from the eligible
//! members. Requests that cannot be filled because too few members are
//! eligible are recorded as shortfall. Directives are then drawn from the
//! same ChaCha8 stream in corpus order, so [`apply`] needs no randomness.

mod transform;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, CorpusError, Sample, Task};
use crate::rng::{self, StudyRng};

pub use transform::{
    docstring_overlap, most_frequent, most_frequent_variable, noise_code_search,
    noise_code_to_text, noise_method_name, noise_sample, noise_var_misuse, BUGGY_TOKEN,
    MASK_TOKEN, NEGATIVE_TOKEN, NONBUGGY_TOKEN, POSITIVE_TOKEN, TARGET_TOKEN,
};

#[derive(Debug, thiserror::Error)]
pub enum NoiseError {
    #[error("sample `{id}` is ineligible: {reason}")]
    IneligibleSample { id: String, reason: String },
    #[error("plan references unknown sample `{0}`")]
    StalePlan(String),
    #[error("noise mode {mode} does not apply to {task} corpora")]
    ModeTaskMismatch { mode: NoiseMode, task: Task },
    #[error("noise rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("io error writing manifest: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Method name replaced by a different name from the label pool.
    LabelSwap,
    /// One random statement removed from the body.
    StmtDelete,
    /// Most frequent variable renamed to the method name.
    NameLeak,
    /// Buggy samples relabelled correct and vice versa.
    OutputFlip,
    /// TARGET/BUGGY or NONBUGGY cue tokens written into the input.
    InputCues,
    /// Docstring replaced by a different docstring from the pool.
    DocSwap,
    /// Code tokens shared with the docstring replaced by MASK.
    MaskOverlap,
    /// Positive/negative label flipped.
    LabelFlip,
    /// Most frequent tokens replaced by POSITIVE/NEGATIVE.
    IdentityTokens,
}

impl NoiseMode {
    pub const ALL: [NoiseMode; 9] = [
        NoiseMode::LabelSwap,
        NoiseMode::StmtDelete,
        NoiseMode::NameLeak,
        NoiseMode::OutputFlip,
        NoiseMode::InputCues,
        NoiseMode::DocSwap,
        NoiseMode::MaskOverlap,
        NoiseMode::LabelFlip,
        NoiseMode::IdentityTokens,
    ];

    pub fn task(self) -> Task {
        match self {
            NoiseMode::LabelSwap | NoiseMode::StmtDelete | NoiseMode::NameLeak => Task::MethodName,
            NoiseMode::OutputFlip | NoiseMode::InputCues => Task::VarMisuse,
            NoiseMode::DocSwap | NoiseMode::MaskOverlap => Task::CodeToText,
            NoiseMode::LabelFlip | NoiseMode::IdentityTokens => Task::CodeSearch,
        }
    }

    pub fn is_output_noise(self) -> bool {
        matches!(
            self,
            NoiseMode::LabelSwap | NoiseMode::OutputFlip | NoiseMode::DocSwap | NoiseMode::LabelFlip
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseMode::LabelSwap => "label_swap",
            NoiseMode::StmtDelete => "stmt_delete",
            NoiseMode::NameLeak => "name_leak",
            NoiseMode::OutputFlip => "output_flip",
            NoiseMode::InputCues => "input_cues",
            NoiseMode::DocSwap => "doc_swap",
            NoiseMode::MaskOverlap => "mask_overlap",
            NoiseMode::LabelFlip => "label_flip",
            NoiseMode::IdentityTokens => "identity_tokens",
        }
    }
}

impl std::fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NoiseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NoiseMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown noise mode `{s}`"))
    }
}

/// Per-sample edit decided at planning time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Directive {
    LabelSwap { new_label: String },
    StmtDelete { statement: usize },
    NameLeak { variable: String },
    FlipToCorrect,
    FlipToBuggy { error_location: usize, repair_variable: String },
    InputCues,
    DocSwap { new_docstring: Vec<String> },
    MaskOverlap,
    LabelFlip,
    IdentityTokens { top_k: usize },
}

impl Directive {
    pub fn kind(&self) -> &'static str {
        match self {
            Directive::LabelSwap { .. } => "label_swap",
            Directive::StmtDelete { .. } => "stmt_delete",
            Directive::NameLeak { .. } => "name_leak",
            Directive::FlipToCorrect => "flip_to_correct",
            Directive::FlipToBuggy { .. } => "flip_to_buggy",
            Directive::InputCues => "input_cues",
            Directive::DocSwap { .. } => "doc_swap",
            Directive::MaskOverlap => "mask_overlap",
            Directive::LabelFlip => "label_flip",
            Directive::IdentityTokens { .. } => "identity_tokens",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseOptions {
    /// How many of the most frequent tokens `identity_tokens` replaces.
    pub identity_top_k: usize,
}

impl Default for NoiseOptions {
    fn default() -> Self {
        Self { identity_top_k: 1 }
    }
}

/// Selection bookkeeping for one class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSelection {
    pub size: usize,
    pub eligible: usize,
    pub requested: usize,
    pub selected: usize,
    pub shortfall: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePlan {
    pub seed: u64,
    pub rate: f64,
    pub mode: NoiseMode,
    pub selected: BTreeSet<String>,
    pub directives: BTreeMap<String, Directive>,
    pub shortfall: usize,
    pub classes: BTreeMap<String, ClassSelection>,
}

/// Provenance sidecar written next to a noisy corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseManifest {
    pub seed: u64,
    pub rate: f64,
    pub mode: NoiseMode,
    pub task: Task,
    pub sample_count: usize,
    pub selected_count: usize,
    pub shortfall: usize,
    pub classes: BTreeMap<String, ClassSelection>,
    /// SHA-256 over the sorted selected ids, newline-joined.
    pub selected_checksum: String,
}

impl NoisePlan {
    /// The empty plan: nothing selected.
    pub fn identity(mode: NoiseMode, seed: u64) -> Self {
        Self {
            seed,
            rate: 0.0,
            mode,
            selected: BTreeSet::new(),
            directives: BTreeMap::new(),
            shortfall: 0,
            classes: BTreeMap::new(),
        }
    }

    pub fn manifest(&self, corpus: &Corpus) -> NoiseManifest {
        let mut hasher = Sha256::new();
        for (k, id) in self.selected.iter().enumerate() {
            if k > 0 {
                hasher.update(b"\n");
            }
            hasher.update(id.as_bytes());
        }
        NoiseManifest {
            seed: self.seed,
            rate: self.rate,
            mode: self.mode,
            task: corpus.task(),
            sample_count: corpus.len(),
            selected_count: self.selected.len(),
            shortfall: self.shortfall,
            classes: self.classes.clone(),
            selected_checksum: hex::encode(hasher.finalize()),
        }
    }
}

impl NoiseManifest {
    pub fn write(&self, path: &Path) -> Result<(), NoiseError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// `round(rate × n)` with halves rounded up; a 1e-9 slack absorbs
/// representation error in products such as `0.35 × 10`.
pub fn requested_count(rate: f64, n: usize) -> usize {
    let exact = rate * n as f64;
    ((exact + 0.5 + 1e-9).floor() as usize).min(n)
}

fn class_of(sample: &Sample) -> String {
    match sample.task {
        Task::VarMisuse => match &sample.bug_meta {
            Some(m) if m.is_buggy => "buggy".into(),
            _ => "correct".into(),
        },
        Task::CodeSearch => sample.target_label.clone(),
        _ => "all".into(),
    }
}

fn eligible(sample: &Sample, mode: NoiseMode, corpus: &Corpus) -> bool {
    match mode {
        NoiseMode::LabelSwap => corpus.label_pool().len() >= 2,
        NoiseMode::StmtDelete => sample.statements.len() >= 2,
        NoiseMode::NameLeak => !sample.variables.is_empty(),
        NoiseMode::OutputFlip => match &sample.bug_meta {
            Some(m) if m.is_buggy => true,
            Some(_) => !sample.variables.is_empty() && sample.tokens.len() >= 2,
            None => false,
        },
        NoiseMode::InputCues => match &sample.bug_meta {
            Some(m) if m.is_buggy => !m.repair_targets.is_empty(),
            Some(_) => true,
            None => false,
        },
        NoiseMode::DocSwap => corpus.docstring_pool().len() >= 2,
        NoiseMode::MaskOverlap => !docstring_overlap(sample).is_empty(),
        NoiseMode::LabelFlip | NoiseMode::IdentityTokens => true,
    }
}

fn pick<'a, T>(rng: &mut StudyRng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

fn draw_directive(
    sample: &Sample,
    mode: NoiseMode,
    corpus: &Corpus,
    options: &NoiseOptions,
    rng: &mut StudyRng,
) -> Directive {
    match mode {
        NoiseMode::LabelSwap => {
            let others: Vec<&String> = corpus
                .label_pool()
                .iter()
                .filter(|l| **l != sample.target_label)
                .collect();
            Directive::LabelSwap {
                new_label: pick(rng, &others).to_string(),
            }
        }
        NoiseMode::StmtDelete => Directive::StmtDelete {
            statement: rng.gen_range(0..sample.statements.len()),
        },
        NoiseMode::NameLeak => Directive::NameLeak {
            variable: most_frequent_variable(sample)
                .expect("eligibility guarantees a variable")
                .to_string(),
        },
        NoiseMode::OutputFlip => match &sample.bug_meta {
            Some(m) if m.is_buggy => Directive::FlipToCorrect,
            _ => {
                let vars = sample.variables_by_first_occurrence();
                let repair_variable = pick(rng, &vars).to_string();
                let error_location = rng.gen_range(1..sample.tokens.len());
                Directive::FlipToBuggy {
                    error_location,
                    repair_variable,
                }
            }
        },
        NoiseMode::InputCues => Directive::InputCues,
        NoiseMode::DocSwap => {
            let others: Vec<&Vec<String>> = corpus
                .docstring_pool()
                .iter()
                .filter(|d| **d != sample.target_tokens)
                .collect();
            Directive::DocSwap {
                new_docstring: (*pick(rng, &others)).clone(),
            }
        }
        NoiseMode::MaskOverlap => Directive::MaskOverlap,
        NoiseMode::LabelFlip => Directive::LabelFlip,
        NoiseMode::IdentityTokens => Directive::IdentityTokens {
            top_k: options.identity_top_k,
        },
    }
}

pub fn plan_noise(
    corpus: &Corpus,
    rate: f64,
    mode: NoiseMode,
    seed: u64,
) -> Result<NoisePlan, NoiseError> {
    plan_noise_with(corpus, rate, mode, seed, &NoiseOptions::default())
}

pub fn plan_noise_with(
    corpus: &Corpus,
    rate: f64,
    mode: NoiseMode,
    seed: u64,
    options: &NoiseOptions,
) -> Result<NoisePlan, NoiseError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(NoiseError::InvalidRate(rate));
    }
    if mode.task() != corpus.task() {
        return Err(NoiseError::ModeTaskMismatch {
            mode,
            task: corpus.task(),
        });
    }

    let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.samples().iter().enumerate() {
        members.entry(class_of(s)).or_default().push(i);
    }

    let mut rng = rng::seeded(seed);
    let mut chosen = BTreeSet::new();
    let mut classes = BTreeMap::new();
    for (class, idx) in &members {
        let pool: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| eligible(&corpus.samples()[i], mode, corpus))
            .collect();
        let requested = requested_count(rate, idx.len());
        let take = requested.min(pool.len());
        chosen.extend(index::sample(&mut rng, pool.len(), take).into_iter().map(|k| pool[k]));
        classes.insert(
            class.clone(),
            ClassSelection {
                size: idx.len(),
                eligible: pool.len(),
                requested,
                selected: take,
                shortfall: requested - take,
            },
        );
    }

    let mut selected = BTreeSet::new();
    let mut directives = BTreeMap::new();
    for &i in &chosen {
        let s = &corpus.samples()[i];
        directives.insert(s.id.clone(), draw_directive(s, mode, corpus, options, &mut rng));
        selected.insert(s.id.clone());
    }

    Ok(NoisePlan {
        seed,
        rate,
        mode,
        selected,
        directives,
        shortfall: classes.values().map(|c: &ClassSelection| c.shortfall).sum(),
        classes,
    })
}

/// Applies a plan. Unselected samples are copied unchanged and order is
/// preserved.
pub fn apply(corpus: &Corpus, plan: &NoisePlan) -> Result<Corpus, NoiseError> {
    let known: std::collections::HashSet<&str> =
        corpus.samples().iter().map(|s| s.id.as_str()).collect();
    for id in plan.selected.iter().chain(plan.directives.keys()) {
        if !known.contains(id.as_str()) || !plan.directives.contains_key(id) {
            return Err(NoiseError::StalePlan(id.clone()));
        }
    }
    let samples = corpus
        .samples()
        .par_iter()
        .map(|s| match plan.directives.get(&s.id) {
            Some(d) => noise_sample(s, d),
            None => Ok(s.clone()),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Corpus::new(corpus.task(), samples)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::normalize_source;

    fn method_corpus(n: usize, labels: usize) -> Corpus {
        let samples = (0..n)
            .map(|i| {
                let code = format!("void f(int a{i}, int b) {{ a{i} = b; b = a{i} + {i}; }}");
                let mut s = normalize_source(&code, Task::MethodName, &format!("m{i}")).unwrap();
                s.target_label = format!("label{}", i % labels);
                s
            })
            .collect();
        Corpus::new(Task::MethodName, samples).unwrap()
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(requested_count(0.25, 10_000), 2_500);
        assert_eq!(requested_count(0.5, 3), 2);
        assert_eq!(requested_count(0.25, 2), 1);
        assert_eq!(requested_count(0.35, 10), 4);
        assert_eq!(requested_count(0.0, 7), 0);
        assert_eq!(requested_count(1.0, 7), 7);
    }

    #[test]
    fn zero_and_full_rate() {
        let c = method_corpus(10, 3);
        let p0 = plan_noise(&c, 0.0, NoiseMode::LabelSwap, 1).unwrap();
        assert!(p0.selected.is_empty());
        assert_eq!(apply(&c, &p0).unwrap(), c);
        let p1 = plan_noise(&c, 1.0, NoiseMode::LabelSwap, 1).unwrap();
        assert_eq!(p1.selected.len(), 10);
        let noisy = apply(&c, &p1).unwrap();
        for (a, b) in c.samples().iter().zip(noisy.samples()) {
            assert_ne!(a.target_label, b.target_label);
            assert_eq!(a.tokens, b.tokens);
        }
    }

    #[test]
    fn quarter_of_ten_thousand() {
        let c = method_corpus(10_000, 10);
        let p = plan_noise(&c, 0.25, NoiseMode::LabelSwap, 9).unwrap();
        assert_eq!(p.selected.len(), 2_500);
        assert_eq!(p.shortfall, 0);
    }

    #[test]
    fn shortfall_recorded_for_ineligible_samples() {
        let mut samples = method_corpus(4, 2).into_samples();
        samples.push({
            let mut s = normalize_source("void f() { return; }", Task::MethodName, "short").unwrap();
            s.target_label = "label0".into();
            s
        });
        let c = Corpus::new(Task::MethodName, samples).unwrap();
        let p = plan_noise(&c, 1.0, NoiseMode::StmtDelete, 3).unwrap();
        assert_eq!(p.selected.len(), 4);
        assert_eq!(p.shortfall, 1);
        assert!(!p.selected.contains("short"));
        let noisy = apply(&c, &p).unwrap();
        assert_eq!(noisy.get("short"), c.get("short"));
    }

    #[test]
    fn mode_must_match_task() {
        let c = method_corpus(4, 2);
        assert!(matches!(
            plan_noise(&c, 0.5, NoiseMode::LabelFlip, 0),
            Err(NoiseError::ModeTaskMismatch { .. })
        ));
        assert!(matches!(
            plan_noise(&c, 1.5, NoiseMode::LabelSwap, 0),
            Err(NoiseError::InvalidRate(_))
        ));
    }

    #[test]
    fn stale_plan_detected() {
        let c = method_corpus(4, 2);
        let mut p = plan_noise(&c, 0.5, NoiseMode::LabelSwap, 0).unwrap();
        p.selected.insert("ghost".into());
        p.directives.insert("ghost".into(), Directive::LabelFlip);
        assert!(matches!(apply(&c, &p), Err(NoiseError::StalePlan(id)) if id == "ghost"));
    }

    #[test]
    fn manifest_is_deterministic() {
        let c = method_corpus(20, 4);
        let a = plan_noise(&c, 0.5, NoiseMode::NameLeak, 5).unwrap().manifest(&c);
        let b = plan_noise(&c, 0.5, NoiseMode::NameLeak, 5).unwrap().manifest(&c);
        assert_eq!(a, b);
        assert_eq!(a.selected_count, 10);
        assert_eq!(a.selected_checksum.len(), 64);
        let other = plan_noise(&c, 0.5, NoiseMode::NameLeak, 6).unwrap().manifest(&c);
        assert_ne!(a.selected_checksum, other.selected_checksum);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in NoiseMode::ALL {
            assert_eq!(m.as_str().parse::<NoiseMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
    }
}
