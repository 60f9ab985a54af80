//! Identifier splitting shared by the F1 metric, the reference model
//! vocabulary and the docstring-overlap mask.
//!
//! A token is split on `_`, on lower-to-upper camel-case boundaries and on
//! letter/digit boundaries; every fragment is lowercased. Tokens without
//! any alphanumeric characters (punctuation) come back as a single
//! fragment so they can still take part in bag-of-tokens features.

/// Splits `token` into lowercase sub-tokens.
///
/// `"setUp"` gives `["set", "up"]`, `"max_value2"` gives
/// `["max", "value", "2"]`, `"("` gives `["("]`.
pub fn split(token: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut prev: Option<char> = None;

    for ch in token.chars() {
        if ch == '_' {
            flush(&mut current, &mut out);
            prev = None;
            continue;
        }
        if let Some(p) = prev {
            let camel = p.is_lowercase() && ch.is_uppercase();
            let alpha_digit = (p.is_alphabetic() && ch.is_ascii_digit())
                || (p.is_ascii_digit() && ch.is_alphabetic());
            if camel || alpha_digit {
                flush(&mut current, &mut out);
            }
        }
        current.extend(ch.to_lowercase());
        prev = Some(ch);
    }
    flush(&mut current, &mut out);
    out
}

fn flush(current: &mut String, out: &mut Vec<String>) {
    if !current.is_empty() {
        out.push(std::mem::take(current));
    }
}

/// Sub-tokens of `token` concatenated, e.g. `"addTwo"` becomes `"addtwo"`.
pub fn normalized(token: &str) -> String {
    split(token).concat()
}
