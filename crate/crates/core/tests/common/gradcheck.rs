//! Finite-difference gradient checking for the reference model.

#![allow(dead_code)]

use std::collections::BTreeMap;

use memgauge::corpus::{Corpus, Sample, Task};
use memgauge::refmodel::{build_vocab, Features, RefModel};
use memgauge::rng;
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely; round-off in a
/// central difference with step 1e-5 is around 1e-11.
pub const FLOOR: f64 = 1e-6;

/// A random model with `words` vocabulary entries besides UNK and PAD and
/// weights spread over roughly [−scale, scale].
pub fn random_model(seed: u64, dim: usize, words: usize, classes: usize, scale: f64) -> RefModel {
    let tokens: Vec<String> = (0..words).map(|i| format!("w{}", char::from(b'a' + i as u8))).collect();
    let sample = Sample {
        id: "v".into(),
        task: Task::MethodName,
        tokens,
        statements: Vec::new(),
        variables: BTreeMap::new(),
        target_label: "x".into(),
        target_tokens: Vec::new(),
        bug_meta: None,
        query_tokens: Vec::new(),
    };
    let corpus = Corpus::new(Task::MethodName, vec![sample]).expect("valid vocab corpus");
    let vocab = build_vocab(&corpus, 1).unwrap();
    let labels = (0..classes).map(|k| format!("c{k}")).collect();
    let mut m = RefModel::new(Task::MethodName, vocab, labels, dim, seed);
    let factor = scale / 0.05;
    m.embeddings_mut().iter_mut().for_each(|w| *w *= factor);
    m.output_weights_mut().iter_mut().for_each(|w| *w *= factor);
    m
}

#[derive(Debug)]
pub struct CheckResult {
    pub checked: usize,
    pub worst: f64,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Compares every analytic partial derivative with a central difference.
pub fn check(model: &RefModel, features: &Features, target: usize) -> CheckResult {
    let g = model.gradient(features, target).unwrap();
    let d = model.dim();
    let mut dense_emb = vec![0.0; model.embeddings().len()];
    for (row, vals) in &g.embedding_rows {
        for (j, v) in vals.iter().enumerate() {
            dense_emb[row * d + j] += v;
        }
    }
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut probe = model.clone();
    for (i, &analytic) in dense_emb.iter().enumerate() {
        let w = probe.embeddings()[i];
        probe.embeddings_mut()[i] = w + STEP;
        let up = probe.loss(features, target).unwrap();
        probe.embeddings_mut()[i] = w - STEP;
        let down = probe.loss(features, target).unwrap();
        probe.embeddings_mut()[i] = w;
        worst = worst.max(rel_err(analytic, (up - down) / (2.0 * STEP)));
        checked += 1;
    }
    for i in 0..g.output.len() {
        let w = probe.output_weights()[i];
        probe.output_weights_mut()[i] = w + STEP;
        let up = probe.loss(features, target).unwrap();
        probe.output_weights_mut()[i] = w - STEP;
        let down = probe.loss(features, target).unwrap();
        probe.output_weights_mut()[i] = w;
        worst = worst.max(rel_err(g.output[i], (up - down) / (2.0 * STEP)));
        checked += 1;
    }
    CheckResult { checked, worst }
}

/// One random configuration: d ≤ 4, vocab ≤ 10, classes ≤ 3.
pub fn random_case(seed: u64) -> CheckResult {
    let mut r = rng::seeded(seed);
    let dim = r.gen_range(1..=4);
    let words = r.gen_range(1..=8);
    let classes = r.gen_range(2..=3);
    let scale = r.gen_range(0.5..2.0);
    let model = random_model(seed, dim, words, classes, scale);
    let n = r.gen_range(0..6);
    let vocab_len = model.vocab().len();
    let features = Features::from_indices((0..n).map(|_| r.gen_range(0..vocab_len)));
    check(&model, &features, r.gen_range(0..classes))
}
