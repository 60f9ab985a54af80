//! Heuristic lexer and normalizer from raw code text to a [`Sample`].
//!
//! This is a stand-in for a real parser. It knows nothing about any
//! particular language beyond a few conventions shared by C-family and
//! Python code:
//!
//! * tokens are identifiers (`[A-Za-z_$][A-Za-z0-9_$]*`), numbers (a digit
//!   followed by alphanumerics, `_` or `.`), string/char literals with
//!   backslash escapes, a fixed set of two-character operators, or single
//!   punctuation characters; whitespace, `//`, `/* */` and `#` comments are
//!   dropped;
//! * statements are segmented inside brace bodies only: `;` closes a
//!   statement (inclusive), `{` closes a block header (inclusive), `}`
//!   closes any pending statement (exclusive). The header before the first
//!   `{` is never a statement;
//! * an identifier is a variable if it follows a type keyword (ignoring
//!   `[`/`]`) and is not a call, if it starts a statement and is followed by
//!   `=`, or if it names a parameter of the first function header.

use std::collections::{BTreeMap, BTreeSet};

use super::{BugMeta, CorpusError, Sample, Span, Task};

const TWO_CHAR_OPS: &[&str] = &[
    "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=", "*=", "/=", "%=", "->", "::",
    "<<", ">>",
];

const DEFAULT_TYPE_KEYWORDS: &[&str] = &[
    "boolean", "bool", "byte", "char", "short", "int", "long", "float", "double", "String",
    "var", "let", "const", "auto",
];

const DEFAULT_RESERVED: &[&str] = &[
    "if", "else", "for", "while", "do", "return", "new", "this", "super", "true", "false",
    "null", "None", "True", "False", "class", "public", "private", "protected", "static",
    "void", "break", "continue", "switch", "case", "default", "try", "catch", "finally",
    "throw", "throws", "import", "package", "def", "lambda", "in", "is", "not", "and", "or",
    "yield", "with", "as", "pass", "final", "function", "end",
];

/// Word lists steering variable detection.
#[derive(Debug, Clone)]
pub struct NormalizerConfig {
    /// Identifiers after one of these are declarations.
    pub type_keywords: BTreeSet<String>,
    /// Words that are never variables.
    pub reserved: BTreeSet<String>,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        Self {
            type_keywords: DEFAULT_TYPE_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            reserved: DEFAULT_RESERVED.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl NormalizerConfig {
    fn is_candidate(&self, token: &str) -> bool {
        is_identifier(token) && !self.reserved.contains(token) && !self.type_keywords.contains(token)
    }
}

pub fn is_identifier(token: &str) -> bool {
    token
        .chars()
        .next()
        .is_some_and(|c| c.is_alphabetic() || c == '_' || c == '$')
}

/// Splits raw source text into lexical tokens.
pub fn lex(raw: &str) -> Vec<String> {
    let chars: Vec<char> = raw.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;

    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if (c == '/' && chars.get(i + 1) == Some(&'/')) || c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                i += 1;
            }
            i = (i + 2).min(chars.len());
        } else if c.is_alphabetic() || c == '_' || c == '$' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$')
            {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len()
                && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.')
            {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else if c == '"' || c == '\'' {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i] != c && chars[i] != '\n' {
                if chars[i] == '\\' {
                    i += 1;
                }
                i += 1;
            }
            i = (i + 1).min(chars.len());
            tokens.push(chars[start..i].iter().collect());
        } else {
            let pair: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            if TWO_CHAR_OPS.contains(&pair.as_str()) {
                tokens.push(pair);
                i += 2;
            } else {
                tokens.push(c.to_string());
                i += 1;
            }
        }
    }
    tokens
}

/// Statement spans over a token stream. Fails if a `}` closes more than
/// was opened, or if a `{` is left open.
pub fn segment_statements(tokens: &[String]) -> Result<Vec<Span>, CorpusError> {
    let mut spans = Vec::new();
    let mut depth: usize = 0;
    let mut start: Option<usize> = None;

    for (i, tok) in tokens.iter().enumerate() {
        match tok.as_str() {
            "{" => {
                if depth > 0 {
                    if let Some(s) = start.take() {
                        spans.push(Span::new(s, i + 1));
                    }
                }
                depth += 1;
            }
            "}" => {
                if depth == 0 {
                    return Err(CorpusError::UnbalancedDelimiters { position: i });
                }
                if let Some(s) = start.take() {
                    spans.push(Span::new(s, i));
                }
                depth -= 1;
            }
            ";" if depth > 0 => {
                spans.push(Span::new(start.take().unwrap_or(i), i + 1));
            }
            _ if depth > 0 => {
                start.get_or_insert(i);
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(CorpusError::UnbalancedDelimiters {
            position: tokens.len(),
        });
    }
    Ok(spans)
}

/// Index of the `(` opening the first function header, if any.
fn header_paren(tokens: &[String]) -> Option<usize> {
    let header_end = tokens.iter().position(|t| t == "{").unwrap_or(tokens.len());
    (1..header_end).find(|&p| tokens[p] == "(" && is_identifier(&tokens[p - 1]))
}

fn parameter_names(tokens: &[String], open: usize, config: &NormalizerConfig) -> Vec<String> {
    let mut names = Vec::new();
    let mut depth = 0usize;
    let mut group_name: Option<&str> = None;
    let mut group_closed = false;

    for tok in &tokens[open..] {
        match tok.as_str() {
            "(" | "[" => {
                depth += 1;
                continue;
            }
            ")" | "]" => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    break;
                }
                continue;
            }
            _ => {}
        }
        if depth != 1 {
            continue;
        }
        match tok.as_str() {
            "," => {
                names.extend(group_name.take().map(str::to_string));
                group_closed = false;
            }
            "=" | ":" => group_closed = true,
            t if !group_closed && config.is_candidate(t) => group_name = Some(t),
            _ => {}
        }
    }
    names.extend(group_name.map(str::to_string));
    names
}

fn detect_variables(
    tokens: &[String],
    statements: &[Span],
    config: &NormalizerConfig,
) -> BTreeSet<String> {
    let mut found = BTreeSet::new();

    for (i, tok) in tokens.iter().enumerate() {
        if !config.type_keywords.contains(tok) {
            continue;
        }
        let mut j = i + 1;
        while j < tokens.len() && (tokens[j] == "[" || tokens[j] == "]") {
            j += 1;
        }
        if j < tokens.len()
            && config.is_candidate(&tokens[j])
            && tokens.get(j + 1).map(String::as_str) != Some("(")
        {
            found.insert(tokens[j].clone());
        }
    }

    for span in statements {
        let s = span.start;
        if config.is_candidate(&tokens[s]) && tokens.get(s + 1).map(String::as_str) == Some("=") {
            found.insert(tokens[s].clone());
        }
    }

    if let Some(open) = header_paren(tokens) {
        found.extend(parameter_names(tokens, open, config));
    }
    found
}

/// Normalizes `raw_code` with the default word lists.
pub fn normalize_source(raw_code: &str, task: Task, id: &str) -> Result<Sample, CorpusError> {
    normalize_source_with(raw_code, task, id, &NormalizerConfig::default())
}

/// Normalizes `raw_code` into a sample. Targets are left empty except the
/// method-name label (the identifier before the first header `(`) and a
/// bug-free `bug_meta` for var-misuse samples.
pub fn normalize_source_with(
    raw_code: &str,
    task: Task,
    id: &str,
    config: &NormalizerConfig,
) -> Result<Sample, CorpusError> {
    let tokens = lex(raw_code);
    if tokens.is_empty() {
        return Err(CorpusError::EmptyTokenStream);
    }
    let statements = segment_statements(&tokens)?;
    let names = detect_variables(&tokens, &statements, config);

    let mut variables: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, tok) in tokens.iter().enumerate() {
        if names.contains(tok) {
            variables.entry(tok.clone()).or_default().push(i);
        }
    }

    let target_label = match task {
        Task::MethodName => header_paren(&tokens)
            .map(|p| tokens[p - 1].clone())
            .unwrap_or_default(),
        _ => String::new(),
    };
    let bug_meta = (task == Task::VarMisuse).then(BugMeta::bug_free);

    Ok(Sample {
        id: id.to_string(),
        task,
        tokens,
        statements,
        variables,
        target_label,
        target_tokens: Vec::new(),
        bug_meta,
        query_tokens: Vec::new(),
    })
}
