//! Slow, definitional implementations used as test oracles.

#![allow(dead_code)]

use std::collections::HashMap;

/// Mean absolute difference over all ordered pairs divided by twice the mean.
pub fn gini_pairwise(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let total: f64 = x.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for a in x {
        for b in x {
            acc += (a - b).abs();
        }
    }
    acc / (2.0 * n * total)
}

fn grams(t: &[String], n: usize) -> Vec<Vec<String>> {
    if t.len() < n {
        return Vec::new();
    }
    (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
}

/// Smoothed sentence BLEU-4 written from the textbook definition: clipped
/// n-gram precision, add-one for n > 1, geometric mean, brevity penalty.
pub fn bleu4_reference(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut logs = 0.0;
    for n in 1..=4 {
        let cand = grams(candidate, n);
        let mut budget: HashMap<Vec<String>, i64> = HashMap::new();
        for g in grams(reference, n) {
            *budget.entry(g).or_default() += 1;
        }
        let mut hits = 0i64;
        for g in &cand {
            if let Some(b) = budget.get_mut(g) {
                if *b > 0 {
                    *b -= 1;
                    hits += 1;
                }
            }
        }
        let (num, den) = if n == 1 {
            (hits as f64, cand.len() as f64)
        } else {
            (hits as f64 + 1.0, cand.len() as f64 + 1.0)
        };
        if num == 0.0 {
            return 0.0;
        }
        logs += (num / den).ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (logs / 4.0).exp()
}

/// Splits an identifier into lowercase fragments with a character-class
/// state machine, independent of the library splitter.
pub fn fragments(id: &str) -> Vec<String> {
    #[derive(PartialEq, Clone, Copy)]
    enum K {
        Lower,
        Upper,
        Digit,
        Other,
    }
    let kind = |c: char| {
        if c.is_ascii_digit() {
            K::Digit
        } else if c.is_uppercase() {
            K::Upper
        } else if c.is_lowercase() {
            K::Lower
        } else {
            K::Other
        }
    };
    let mut out: Vec<String> = Vec::new();
    let mut cur = String::new();
    let mut last: Option<K> = None;
    for c in id.chars() {
        if c == '_' {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            last = None;
            continue;
        }
        let k = kind(c);
        let cut = matches!(
            (last, k),
            (Some(K::Lower), K::Upper)
                | (Some(K::Lower | K::Upper), K::Digit)
                | (Some(K::Digit), K::Lower | K::Upper)
        );
        if cut && !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        cur.extend(c.to_lowercase());
        last = Some(k);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Multiset sub-token F1 computed by brute-force matching.
pub fn f1_reference(predicted: &str, actual: &str) -> f64 {
    let p = fragments(predicted);
    let mut a = fragments(actual);
    let mut tp = 0usize;
    for t in &p {
        if let Some(i) = a.iter().position(|x| x == t) {
            a.swap_remove(i);
            tp += 1;
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let prec = tp as f64 / p.len() as f64;
    let rec = tp as f64 / fragments(actual).len() as f64;
    2.0 * prec * rec / (prec + rec)
}
