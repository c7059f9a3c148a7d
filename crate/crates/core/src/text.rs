//! Deterministic text analysis shared by the sanitizer, skill scoring, and
//! the rule-based oracle: normalization, keyword matching, token-set
//! similarity, and path-token extraction.

use std::collections::BTreeSet;

use regex::Regex;
use std::sync::OnceLock;

/// Lowercases and strips punctuation, collapsing whitespace runs. Word-
/// internal `/ . _ -` survive so path tokens stay intact.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = true;
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '/' || ch == '.' || ch == '_' || ch == '-' {
            for lower in ch.to_lowercase() {
                out.push(lower);
            }
            last_space = false;
        } else if !last_space {
            out.push(' ');
            last_space = true;
        }
    }
    out.split(' ')
        .map(|token| token.trim_matches(['-', '.', '/', '_']))
        .filter(|token| !token.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Word tokens of the normalized form.
pub fn tokens(text: &str) -> Vec<String> {
    normalize(text).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

/// Token set of the normalized form.
pub fn token_set(text: &str) -> BTreeSet<String> {
    tokens(text).into_iter().collect()
}

/// Token-set Jaccard similarity over case-folded word tokens.
pub fn jaccard_similarity(a: &str, b: &str) -> f64 {
    let sa = token_set(a);
    let sb = token_set(b);
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let intersection = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    intersection / union
}

/// Minimum keyword overlap for a directive to count as semantically present.
pub const KEYWORD_OVERLAP_THRESHOLD: f64 = 0.8;

/// Pluggable semantic matcher for directives and lessons.
///
/// The default is normalized substring-or-keyword-set matching; an
/// embedding-based matcher can be substituted without touching callers.
pub trait DirectiveMatcher: Send + Sync {
    /// Does `directive` appear, semantically, inside `body`?
    fn matches(&self, directive: &str, body: &str) -> bool;
}

/// Case-folded, punctuation-stripped substring or >=80% keyword overlap.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeywordMatcher;

impl DirectiveMatcher for KeywordMatcher {
    fn matches(&self, directive: &str, body: &str) -> bool {
        let needle = normalize(directive);
        if needle.is_empty() {
            return true;
        }
        let haystack = normalize(body);
        if haystack.contains(&needle) {
            return true;
        }
        let directive_tokens = token_set(directive);
        if directive_tokens.is_empty() {
            return true;
        }
        let body_tokens = token_set(body);
        let hit = directive_tokens.iter().filter(|t| body_tokens.contains(*t)).count() as f64;
        hit / directive_tokens.len() as f64 >= KEYWORD_OVERLAP_THRESHOLD
    }
}

/// Fraction of `items` matched in `body` (1.0 when `items` is empty).
pub fn coverage_fraction<M: DirectiveMatcher + ?Sized>(
    matcher: &M,
    items: &[&str],
    body: &str,
) -> f64 {
    if items.is_empty() {
        return 1.0;
    }
    let hit = items.iter().filter(|item| matcher.matches(item, body)).count() as f64;
    hit / items.len() as f64
}

fn path_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // Relative path tokens such as vmodel/top.v: at least one slash and a
        // final segment with an extension.
        Regex::new(r"[A-Za-z0-9_\-][A-Za-z0-9_\-.]*(?:/[A-Za-z0-9_\-.]+)+\.[A-Za-z0-9]+").unwrap()
    })
}

/// Extracts relative path-like tokens (e.g. `vmodel/top.v`) from free text.
pub fn extract_path_tokens(text: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for m in path_regex().find_iter(text) {
        let token = m.as_str().to_string();
        if seen.insert(token.clone()) {
            out.push(token);
        }
    }
    out
}

/// Words that make a directive line actionable for an agent.
pub const ACTION_VERBS: &[&str] = &[
    "use", "run", "compile", "simulate", "edit", "write", "read", "inspect", "check", "verify",
    "validate", "prefer", "avoid", "keep", "fix", "list", "search", "call", "apply", "include",
    "pass", "wire", "do",
];

/// Does the line contain an action verb or a named tool?
pub fn is_actionable(line: &str, tool_names: &[String]) -> bool {
    let words = token_set(line);
    if ACTION_VERBS.iter().any(|verb| words.contains(*verb)) {
        return true;
    }
    tool_names.iter().any(|tool| words.contains(&tool.to_lowercase()))
}

/// Words that negate a directive ("do not", "avoid", "never").
pub fn is_negated(line: &str) -> bool {
    let normalized = normalize(line);
    normalized.contains("do not")
        || normalized.contains("don t")
        || normalized.contains("never")
        || normalized.contains("avoid")
        || normalized.contains("stop ")
}

/// Non-empty trimmed lines of a skill body.
pub fn body_lines(body: &str) -> Vec<&str> {
    body.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
}

/// Case-insensitively replaces every occurrence of `needle` in `text`.
///
/// Repeats until no occurrence remains, so overlapping embeddings cannot
/// reintroduce the needle.
pub fn scrub_all(text: &str, needle: &str, replacement: &str) -> String {
    if needle.is_empty() {
        return text.to_string();
    }
    // A replacement that itself contains the needle would never terminate.
    let replacement = if replacement.to_lowercase().contains(&needle.to_lowercase()) {
        ""
    } else {
        replacement
    };
    let mut current = text.to_string();
    loop {
        let lower = current.to_lowercase();
        let lower_needle = needle.to_lowercase();
        let Some(pos) = lower.find(&lower_needle) else {
            return current;
        };
        // Byte offsets in `lower` match `current` only for ASCII; walk chars
        // to stay safe with mixed-case non-ASCII input.
        let mut replaced = String::with_capacity(current.len());
        let mut consumed = 0;
        for ch in current.chars() {
            let len = ch.len_utf8();
            if consumed == pos {
                replaced.push_str(replacement);
            }
            if consumed < pos || consumed >= pos + lower_needle.len() {
                replaced.push(ch);
            }
            consumed += len;
        }
        if consumed == pos {
            replaced.push_str(replacement);
        }
        current = replaced;
    }
}
