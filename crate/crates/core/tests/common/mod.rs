#![allow(dead_code)]
pub mod oracles;
pub mod gradcheck;

use std::collections::BTreeSet;

use memgauge::corpus::{normalize_source, BugMeta, Corpus, Sample, Task};
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "count", "total", "idx", "name", "value", "buf", "item", "node", "left", "right", "size",
    "key", "data", "flag", "result", "tmp",
];
const LABELS: &[&str] = &["getName", "setValue", "run", "sizeOf", "parseInt", "close"];
const DOC_WORDS: &[&str] = &["returns", "the", "sum", "of", "list", "a", "value", "sorted", "new"];

pub fn ident() -> impl Strategy<Value = String> {
    (prop::sample::select(WORDS), prop::option::of(prop::sample::select(WORDS))).prop_map(|(a, b)| match b {
        Some(b) => format!("{a}{}{}", b[..1].to_uppercase(), &b[1..]),
        None => a.to_string(),
    })
}

fn statement() -> impl Strategy<Value = String> {
    (0..5u8, ident(), ident(), ident()).prop_map(|(k, a, b, c)| match k {
        0 => format!("int {a} = {b} + {c};"),
        1 => format!("{a} = {b}({c});"),
        2 => format!("{b}({a}, {c});"),
        3 => format!("if ({a} > {b}) {{ {c} = {a}; }}"),
        _ => format!("return {a};"),
    })
}

/// Source text of a small method with a `f` header.
pub fn method_code() -> impl Strategy<Value = String> {
    (prop::collection::vec(ident(), 0..3), prop::collection::vec(statement(), 1..6)).prop_map(|(params, body)| {
        let params: Vec<String> = params.iter().map(|p| format!("int {p}")).collect();
        format!("void f({}) {{ {} }}", params.join(", "), body.join(" "))
    })
}

fn words(pool: &'static [&'static str], len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(pool).prop_map(str::to_string), len)
}

/// Task-specific targets, all drawn independently of the code.
#[derive(Debug, Clone)]
pub struct Extras {
    pub label: String,
    pub doc: Vec<String>,
    pub query: Vec<String>,
    pub positive: bool,
    pub buggy: bool,
    pub pick: usize,
}

fn extras() -> impl Strategy<Value = Extras> {
    (
        prop::sample::select(LABELS),
        words(DOC_WORDS, 1..7),
        words(DOC_WORDS, 1..5),
        any::<bool>(),
        any::<bool>(),
        any::<usize>(),
    )
        .prop_map(|(label, doc, query, positive, buggy, pick)| Extras {
            label: label.to_string(),
            doc,
            query,
            positive,
            buggy,
            pick,
        })
}

pub fn build_sample(task: Task, id: &str, code: &str, x: &Extras) -> Sample {
    let mut s = normalize_source(code, task, id).expect("generated code is balanced");
    match task {
        Task::MethodName => s.target_label = x.label.clone(),
        Task::CodeToText => s.target_tokens = x.doc.clone(),
        Task::CodeSearch => {
            s.query_tokens = x.query.clone();
            s.target_label = if x.positive { "1" } else { "0" }.into();
        }
        Task::VarMisuse => {
            let names = s.variables_by_first_occurrence();
            if x.buggy && !names.is_empty() && s.tokens.len() > 1 {
                let var = names[x.pick % names.len()];
                let repair: BTreeSet<usize> = s.variables[var].iter().copied().collect();
                let location = 1 + x.pick % (s.tokens.len() - 1);
                s.bug_meta = Some(BugMeta {
                    is_buggy: true,
                    error_location: location,
                    repair_targets: repair,
                });
            }
        }
    }
    s
}

pub fn corpus(task: Task, size: std::ops::Range<usize>) -> impl Strategy<Value = Corpus> {
    prop::collection::vec((method_code(), extras()), size).prop_map(move |items| {
        let samples = items
            .iter()
            .enumerate()
            .map(|(i, (code, x))| build_sample(task, &format!("s{i:04}"), code, x))
            .collect();
        Corpus::new(task, samples).expect("generated samples are valid")
    })
}

pub fn any_task() -> impl Strategy<Value = Task> {
    prop::sample::select(vec![Task::MethodName, Task::VarMisuse, Task::CodeToText, Task::CodeSearch])
}
