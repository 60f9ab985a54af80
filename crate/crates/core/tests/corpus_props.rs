mod common;

use memgauge::corpus::{load_corpus, normalize_source, write_corpus, Corpus, Task};
use memgauge::subtoken;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jsonl_round_trip(c in common::any_task().prop_flat_map(|t| common::corpus(t, 1..20))) {
        let task = c.task();
        let text = c.to_jsonl();
        let back = Corpus::from_jsonl(text.as_bytes(), task).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn file_round_trip(c in common::corpus(Task::CodeSearch, 1..15)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_corpus(&c, &path).unwrap();
        prop_assert_eq!(load_corpus(&path, Task::CodeSearch).unwrap(), c);
    }

    #[test]
    fn normalizer_is_pure_and_well_formed(code in common::method_code(), task in common::any_task()) {
        let a = normalize_source(&code, task, "x").unwrap();
        let b = normalize_source(&code, task, "x").unwrap();
        prop_assert_eq!(&a, &b);
        let header_end = a.tokens.iter().position(|t| t == "{").unwrap();
        for w in a.statements.windows(2) {
            prop_assert!(w[0].end <= w[1].start);
        }
        for s in &a.statements {
            prop_assert!(s.start > header_end && s.start < s.end && s.end <= a.tokens.len());
        }
        for (name, occ) in &a.variables {
            prop_assert!(occ.iter().all(|&i| a.tokens[i] == *name));
            let all: Vec<usize> = (0..a.tokens.len()).filter(|&i| a.tokens[i] == *name).collect();
            prop_assert_eq!(occ, &all);
        }
    }

    #[test]
    fn corrupted_indices_are_rejected(c in common::corpus(Task::MethodName, 1..10), shift in 1..5usize) {
        let mut samples = c.into_samples();
        let Some((s, name)) = samples
            .iter_mut()
            .find_map(|s| s.variables.keys().next().cloned().map(|n| (s, n)))
        else {
            return Ok(());
        };
        let n = s.tokens.len();
        let occ = s.variables.get_mut(&name).unwrap();
        let bogus = (occ[0] + shift) % n;
        prop_assume!(s.tokens[bogus] != name);
        occ[0] = bogus;
        occ.sort();
        occ.dedup();
        let line = serde_json::to_string(&s).unwrap();
        prop_assert!(Corpus::new(Task::MethodName, samples).is_err());
        prop_assert!(Corpus::from_jsonl(line.as_bytes(), Task::MethodName).is_err());
    }

    #[test]
    fn subtokens_cover_identifier(id in "[a-zA-Z][a-zA-Z0-9_]{0,12}") {
        let parts = subtoken::split(&id);
        let joined: String = parts.concat();
        let expected: String = id.chars().filter(|c| *c != '_').collect::<String>().to_lowercase();
        prop_assert_eq!(joined, expected);
        prop_assert!(parts.iter().all(|p| !p.is_empty() && p.chars().all(|c| !c.is_uppercase())));
    }
}

#[test]
fn worked_example_spans() {
    let s = normalize_source("void f(int a){a=1;}", Task::MethodName, "m").unwrap();
    assert_eq!(s.tokens, ["void", "f", "(", "int", "a", ")", "{", "a", "=", "1", ";", "}"]);
    assert_eq!(s.variables["a"], vec![4, 7]);
    assert_eq!(s.statements.len(), 1);
    assert_eq!((s.statements[0].start, s.statements[0].end), (7, 11));
}
