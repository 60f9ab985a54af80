//! Per-sample noise transforms. Each takes a sample and a precomputed
//! directive and returns the noisy copy; the input is never mutated.

use std::collections::{BTreeSet, HashMap};

use crate::corpus::{BugMeta, Sample, Span, Task};
use crate::subtoken;

use super::{Directive, NoiseError};

pub const TARGET_TOKEN: &str = "TARGET";
pub const BUGGY_TOKEN: &str = "BUGGY";
pub const NONBUGGY_TOKEN: &str = "NONBUGGY";
pub const MASK_TOKEN: &str = "MASK";
pub const POSITIVE_TOKEN: &str = "POSITIVE";
pub const NEGATIVE_TOKEN: &str = "NEGATIVE";

fn ineligible(sample: &Sample, reason: impl Into<String>) -> NoiseError {
    NoiseError::IneligibleSample {
        id: sample.id.clone(),
        reason: reason.into(),
    }
}

fn expect_task(sample: &Sample, task: Task) -> Result<(), NoiseError> {
    if sample.task == task {
        Ok(())
    } else {
        Err(ineligible(
            sample,
            format!("{} transform applied to a {} sample", task, sample.task),
        ))
    }
}

/// The `k` most frequent values of `tokens`, ties broken by earliest first
/// occurrence.
pub fn most_frequent<'a, I>(tokens: I, k: usize) -> Vec<String>
where
    I: IntoIterator<Item = &'a String>,
{
    let mut stats: HashMap<&str, (usize, usize)> = HashMap::new();
    for (pos, t) in tokens.into_iter().enumerate() {
        stats.entry(t.as_str()).or_insert((0, pos)).0 += 1;
    }
    let mut ranked: Vec<(&str, usize, usize)> =
        stats.into_iter().map(|(t, (c, first))| (t, c, first)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.into_iter().take(k).map(|(t, _, _)| t.to_string()).collect()
}

/// Variable with the most occurrences, ties broken by earliest first
/// occurrence.
pub fn most_frequent_variable(sample: &Sample) -> Option<&str> {
    sample
        .variables
        .iter()
        .filter(|(_, occ)| !occ.is_empty())
        .min_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.1[0].cmp(&b.1[0])))
        .map(|(name, _)| name.as_str())
}

/// Code tokens whose normalized form occurs among the normalized
/// docstring tokens.
pub fn docstring_overlap(sample: &Sample) -> Vec<usize> {
    let doc: BTreeSet<String> = sample
        .target_tokens
        .iter()
        .map(|t| subtoken::normalized(t))
        .filter(|t| !t.is_empty())
        .collect();
    sample
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| doc.contains(&subtoken::normalized(t)))
        .map(|(i, _)| i)
        .collect()
}

fn delete_statement(sample: &Sample, statement: usize) -> Result<Sample, NoiseError> {
    if sample.statements.len() < 2 {
        return Err(ineligible(sample, "statement deletion needs at least 2 statements"));
    }
    let Some(span) = sample.statements.get(statement).copied() else {
        return Err(ineligible(sample, format!("no statement {statement}")));
    };
    let width = span.len();
    let shift = |i: usize| if i >= span.end { i - width } else { i };

    let mut out = sample.clone();
    out.tokens.drain(span.start..span.end);
    out.statements = sample
        .statements
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != statement)
        .map(|(_, s)| Span::new(shift(s.start), shift(s.end)))
        .collect();
    out.variables = sample
        .variables
        .iter()
        .filter_map(|(name, occ)| {
            let kept: Vec<usize> = occ
                .iter()
                .filter(|&&i| i < span.start || i >= span.end)
                .map(|&i| shift(i))
                .collect();
            (!kept.is_empty()).then(|| (name.clone(), kept))
        })
        .collect();
    Ok(out)
}

pub fn noise_method_name(sample: &Sample, directive: &Directive) -> Result<Sample, NoiseError> {
    expect_task(sample, Task::MethodName)?;
    match directive {
        Directive::LabelSwap { new_label } => {
            if *new_label == sample.target_label {
                return Err(ineligible(sample, "label swap must pick a different label"));
            }
            let mut out = sample.clone();
            out.target_label = new_label.clone();
            Ok(out)
        }
        Directive::StmtDelete { statement } => delete_statement(sample, *statement),
        Directive::NameLeak { variable } => {
            let Some(occ) = sample.variables.get(variable) else {
                return Err(ineligible(sample, format!("no variable `{variable}`")));
            };
            let mut out = sample.clone();
            for &i in occ {
                out.tokens[i] = sample.target_label.clone();
            }
            out.resync_variables();
            Ok(out)
        }
        other => Err(ineligible(
            sample,
            format!("directive {} does not apply to method_name", other.kind()),
        )),
    }
}

pub fn noise_var_misuse(sample: &Sample, directive: &Directive) -> Result<Sample, NoiseError> {
    expect_task(sample, Task::VarMisuse)?;
    let Some(meta) = sample.bug_meta.as_ref() else {
        return Err(ineligible(sample, "missing bug_meta"));
    };
    let mut out = sample.clone();
    match directive {
        Directive::FlipToCorrect => {
            if !meta.is_buggy {
                return Err(ineligible(sample, "sample is already bug-free"));
            }
            out.bug_meta = Some(BugMeta::bug_free());
        }
        Directive::FlipToBuggy {
            error_location,
            repair_variable,
        } => {
            if meta.is_buggy {
                return Err(ineligible(sample, "sample is already buggy"));
            }
            let Some(occ) = sample.variables.get(repair_variable) else {
                return Err(ineligible(sample, format!("no variable `{repair_variable}`")));
            };
            if *error_location == 0 || *error_location >= sample.tokens.len() {
                return Err(ineligible(sample, "error location out of range"));
            }
            out.bug_meta = Some(BugMeta {
                is_buggy: true,
                error_location: *error_location,
                repair_targets: occ.iter().copied().collect(),
            });
        }
        Directive::InputCues if meta.is_buggy => {
            if meta.repair_targets.is_empty() {
                return Err(ineligible(sample, "buggy sample without repair targets"));
            }
            let targets: BTreeSet<&str> = meta
                .repair_targets
                .iter()
                .map(|&i| sample.tokens[i].as_str())
                .collect();
            for (i, t) in sample.tokens.iter().enumerate() {
                if targets.contains(t.as_str()) {
                    out.tokens[i] = TARGET_TOKEN.into();
                }
            }
            out.tokens[meta.error_location] = BUGGY_TOKEN.into();
            out.resync_variables();
        }
        Directive::InputCues => {
            let top = most_frequent(&sample.tokens, 1);
            for t in out.tokens.iter_mut() {
                if top.contains(t) {
                    *t = NONBUGGY_TOKEN.into();
                }
            }
            out.resync_variables();
        }
        other => {
            return Err(ineligible(
                sample,
                format!("directive {} does not apply to var_misuse", other.kind()),
            ))
        }
    }
    Ok(out)
}

pub fn noise_code_to_text(sample: &Sample, directive: &Directive) -> Result<Sample, NoiseError> {
    expect_task(sample, Task::CodeToText)?;
    match directive {
        Directive::DocSwap { new_docstring } => {
            if *new_docstring == sample.target_tokens {
                return Err(ineligible(sample, "docstring swap must pick a different docstring"));
            }
            let mut out = sample.clone();
            out.target_tokens = new_docstring.clone();
            Ok(out)
        }
        Directive::MaskOverlap => {
            let hits = docstring_overlap(sample);
            if hits.is_empty() {
                return Err(ineligible(sample, "no code token overlaps the docstring"));
            }
            let mut out = sample.clone();
            for i in hits {
                out.tokens[i] = MASK_TOKEN.into();
            }
            out.resync_variables();
            Ok(out)
        }
        other => Err(ineligible(
            sample,
            format!("directive {} does not apply to code_to_text", other.kind()),
        )),
    }
}

pub fn noise_code_search(sample: &Sample, directive: &Directive) -> Result<Sample, NoiseError> {
    expect_task(sample, Task::CodeSearch)?;
    let positive = match sample.target_label.as_str() {
        "1" => true,
        "0" => false,
        other => return Err(ineligible(sample, format!("label `{other}` is not 0/1"))),
    };
    let mut out = sample.clone();
    match directive {
        Directive::LabelFlip => {
            out.target_label = if positive { "0" } else { "1" }.into();
        }
        Directive::IdentityTokens { top_k } => {
            let top = most_frequent(sample.tokens.iter().chain(&sample.query_tokens), *top_k);
            let cue = if positive { POSITIVE_TOKEN } else { NEGATIVE_TOKEN };
            for t in out.tokens.iter_mut().chain(out.query_tokens.iter_mut()) {
                if top.contains(t) {
                    *t = cue.into();
                }
            }
            out.resync_variables();
        }
        other => {
            return Err(ineligible(
                sample,
                format!("directive {} does not apply to code_search", other.kind()),
            ))
        }
    }
    Ok(out)
}

/// Dispatches on the sample's task.
pub fn noise_sample(sample: &Sample, directive: &Directive) -> Result<Sample, NoiseError> {
    match sample.task {
        Task::MethodName => noise_method_name(sample, directive),
        Task::VarMisuse => noise_var_misuse(sample, directive),
        Task::CodeToText => noise_code_to_text(sample, directive),
        Task::CodeSearch => noise_code_search(sample, directive),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::normalize_source;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn method(code: &str, label: &str) -> Sample {
        let mut s = normalize_source(code, Task::MethodName, "m").unwrap();
        s.target_label = label.into();
        s
    }

    #[test]
    fn label_swap_changes_only_label() {
        let s = method("void f(int a){a=1;}", "run");
        let out = noise_method_name(&s, &Directive::LabelSwap { new_label: "get".into() }).unwrap();
        assert_eq!(out.target_label, "get");
        assert_ne!(out.target_label, s.target_label);
        assert_eq!(out.tokens, s.tokens);
        assert_eq!(out.variables, s.variables);

        let same = Directive::LabelSwap { new_label: "run".into() };
        assert!(matches!(
            noise_method_name(&s, &same),
            Err(NoiseError::IneligibleSample { .. })
        ));
    }

    #[test]
    fn statement_delete_reindexes() {
        let s = method("void f(int a, int b){a=1; b=a+2;}", "f");
        assert_eq!(s.statements.len(), 2);
        let out = noise_method_name(&s, &Directive::StmtDelete { statement: 0 }).unwrap();
        assert_eq!(out.statements.len(), 1);
        assert!(out.tokens.len() < s.tokens.len());
        assert_eq!(
            out.tokens[out.statements[0].start..out.statements[0].end].join(" "),
            "b = a + 2 ;"
        );
        out.validate().unwrap();
        // `a` keeps its header occurrence and the one in the surviving statement
        assert_eq!(out.variables["a"].len(), 2);

        let single = method("void f(int a){a=1;}", "f");
        assert!(noise_method_name(&single, &Directive::StmtDelete { statement: 0 }).is_err());
    }

    #[test]
    fn name_leak_replaces_most_frequent_variable() {
        // 12-token body: x occurs 3 times, y once
        let mut s = method("void f(int x){x=x+y;}", "multiply");
        s.variables.insert("y".into(), vec![s.tokens.iter().position(|t| t == "y").unwrap()]);
        assert_eq!(s.tokens.len(), 14);
        assert_eq!(s.variables["x"].len(), 3);
        assert_eq!(most_frequent_variable(&s), Some("x"));

        let out =
            noise_method_name(&s, &Directive::NameLeak { variable: "x".into() }).unwrap();
        let leaked = out.tokens.iter().filter(|t| *t == "multiply").count();
        assert_eq!(leaked, 3);
        assert!(!out.tokens.contains(&"x".to_string()));
        assert_eq!(out.variables["multiply"].len(), 3);
        out.validate().unwrap();
    }

    #[test]
    fn most_frequent_variable_tie_breaks_on_first_occurrence() {
        let s = method("void f(int b, int a){a=b;}", "f");
        assert_eq!(most_frequent_variable(&s), Some("b"));
    }

    fn vm_sample() -> Sample {
        // 12 tokens, repair target `t` at 2 and 9, bug at 5
        let tokens = toks(&["f", "(", "t", ",", "u", "u", ")", "{", "=", "t", ";", "}"]);
        let s = Sample {
            id: "v".into(),
            task: Task::VarMisuse,
            tokens,
            statements: vec![],
            variables: [("t".to_string(), vec![2, 9]), ("u".to_string(), vec![4, 5])]
                .into_iter()
                .collect(),
            target_label: String::new(),
            target_tokens: vec![],
            bug_meta: Some(BugMeta {
                is_buggy: true,
                error_location: 5,
                repair_targets: [2, 9].into_iter().collect(),
            }),
            query_tokens: vec![],
        };
        s.validate().unwrap();
        s
    }

    #[test]
    fn output_flip_buggy_to_correct() {
        let s = vm_sample();
        let out = noise_var_misuse(&s, &Directive::FlipToCorrect).unwrap();
        assert_eq!(out.bug_meta, Some(BugMeta::bug_free()));
        assert_eq!(out.tokens, s.tokens);
        out.validate().unwrap();
    }

    #[test]
    fn output_flip_correct_to_buggy_and_back() {
        let mut s = vm_sample();
        s.bug_meta = Some(BugMeta::bug_free());
        let d = Directive::FlipToBuggy {
            error_location: 4,
            repair_variable: "t".into(),
        };
        let buggy = noise_var_misuse(&s, &d).unwrap();
        let meta = buggy.bug_meta.clone().unwrap();
        assert!(meta.is_buggy);
        assert_eq!(meta.error_location, 4);
        assert_eq!(meta.repair_targets, [2, 9].into_iter().collect());
        let back = noise_var_misuse(&buggy, &Directive::FlipToCorrect).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn input_cues_on_buggy_sample() {
        let s = vm_sample();
        let out = noise_var_misuse(&s, &Directive::InputCues).unwrap();
        assert_eq!(out.tokens[2], TARGET_TOKEN);
        assert_eq!(out.tokens[9], TARGET_TOKEN);
        assert_eq!(out.tokens[5], BUGGY_TOKEN);
        assert_eq!(out.bug_meta, s.bug_meta);
        let changed = (0..12).filter(|&i| out.tokens[i] != s.tokens[i]).count();
        assert_eq!(changed, 3);
        out.validate().unwrap();
    }

    #[test]
    fn input_cues_on_correct_sample() {
        let code = "void f(int a) { g(a); h(a); k(1); }";
        let s = normalize_source(code, Task::VarMisuse, "c").unwrap();
        let parens = s.tokens.iter().filter(|t| *t == "(").count();
        assert_eq!(parens, 4);
        assert_eq!(most_frequent(&s.tokens, 1), vec!["(".to_string()]);
        s.validate().unwrap();
        let out = noise_var_misuse(&s, &Directive::InputCues).unwrap();
        assert_eq!(out.tokens.iter().filter(|t| *t == NONBUGGY_TOKEN).count(), 4);
        assert_eq!(out.bug_meta, s.bug_meta);
        out.validate().unwrap();
    }

    fn c2t(code: &[&str], doc: &[&str]) -> Sample {
        Sample {
            id: "d".into(),
            task: Task::CodeToText,
            tokens: toks(code),
            statements: vec![],
            variables: Default::default(),
            target_label: String::new(),
            target_tokens: toks(doc),
            bug_meta: None,
            query_tokens: vec![],
        }
    }

    #[test]
    fn mask_overlap_example() {
        let s = c2t(&["def", "add", "(", "a", ")"], &["add", "two", "numbers"]);
        let out = noise_code_to_text(&s, &Directive::MaskOverlap).unwrap();
        assert_eq!(out.tokens, toks(&["def", "MASK", "(", "a", ")"]));
        assert_eq!(out.target_tokens, s.target_tokens);

        let none = c2t(&["def", "f", "(", ")"], &["nothing", "here"]);
        assert!(matches!(
            noise_code_to_text(&none, &Directive::MaskOverlap),
            Err(NoiseError::IneligibleSample { .. })
        ));
    }

    #[test]
    fn doc_swap() {
        let s = c2t(&["x"], &["old", "doc"]);
        let d = Directive::DocSwap { new_docstring: toks(&["new", "doc"]) };
        let out = noise_code_to_text(&s, &d).unwrap();
        assert_eq!(out.target_tokens, toks(&["new", "doc"]));
        assert_eq!(out.tokens, s.tokens);
        let same = Directive::DocSwap { new_docstring: toks(&["old", "doc"]) };
        assert!(noise_code_to_text(&s, &same).is_err());
    }

    fn cs(label: &str, code: &[&str], query: &[&str]) -> Sample {
        Sample {
            id: "q".into(),
            task: Task::CodeSearch,
            tokens: toks(code),
            statements: vec![],
            variables: Default::default(),
            target_label: label.into(),
            target_tokens: vec![],
            bug_meta: None,
            query_tokens: toks(query),
        }
    }

    #[test]
    fn label_flip_is_an_involution() {
        let s = cs("1", &["x"], &["q"]);
        let once = noise_code_search(&s, &Directive::LabelFlip).unwrap();
        assert_eq!(once.target_label, "0");
        let twice = noise_code_search(&once, &Directive::LabelFlip).unwrap();
        assert_eq!(twice, s);
    }

    #[test]
    fn identity_tokens_cue_label() {
        let s = cs("1", &["x", "=", "x", "+", "y"], &["add", "x"]);
        let out = noise_code_search(&s, &Directive::IdentityTokens { top_k: 1 }).unwrap();
        assert_eq!(out.tokens, toks(&["POSITIVE", "=", "POSITIVE", "+", "y"]));
        assert_eq!(out.query_tokens, toks(&["add", "POSITIVE"]));

        let neg = cs("0", &["a", "b"], &["b"]);
        let out = noise_code_search(&neg, &Directive::IdentityTokens { top_k: 1 }).unwrap();
        assert_eq!(out.tokens, toks(&["a", "NEGATIVE"]));
        assert_eq!(out.query_tokens, toks(&["NEGATIVE"]));
    }

    #[test]
    fn wrong_task_is_rejected() {
        let s = cs("1", &["x"], &[]);
        assert!(noise_method_name(&s, &Directive::LabelSwap { new_label: "a".into() }).is_err());
        assert!(noise_code_search(&s, &Directive::MaskOverlap).is_err());
    }
}
