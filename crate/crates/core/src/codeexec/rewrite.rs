use serde::{Deserialize, Serialize};

use super::ExtractedProgram;
use crate::corpus::Task;

/// Names never treated as the function under test.
const NOT_CALLEES: &[&str] = &[
    "abs", "all", "any", "bool", "dict", "divmod", "enumerate", "filter", "float", "frozenset",
    "hash", "int", "isinstance", "iter", "len", "list", "map", "max", "min", "next", "print",
    "range", "repr", "reversed", "round", "set", "sorted", "str", "sum", "tuple", "type", "zip",
    "and", "or", "not", "in", "is", "assert", "lambda", "if", "else", "for", "None", "True",
    "False",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RewriteError {
    #[error("nothing to rewrite: program is incomplete")]
    Incomplete,
}

/// Program plus assertions retargeted at the generated entry point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewrittenSuite {
    pub program: String,
    pub assertions: Vec<String>,
    /// Function the original assertions call, if one was found.
    pub callee: Option<String>,
    /// Function the rewritten assertions call.
    pub entry_point: String,
    /// True when the callee was substituted.
    pub renamed: bool,
}

/// Byte ranges of simple-name calls `name(` outside string literals.
pub fn call_sites(src: &str) -> Vec<(String, std::ops::Range<usize>)> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    let mut prev_sig: Option<char> = None;
    while let Some((i, c)) = chars.next() {
        if c == '"' || c == '\'' {
            // Skip the literal, honouring backslash escapes.
            let mut escaped = false;
            for (_, d) in chars.by_ref() {
                if escaped {
                    escaped = false;
                } else if d == '\\' {
                    escaped = true;
                } else if d == c {
                    break;
                }
            }
            prev_sig = Some(c);
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let mut end = i + c.len_utf8();
            while let Some(&(j, d)) = chars.peek() {
                if d.is_alphanumeric() || d == '_' {
                    end = j + d.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            let after = src[end..].trim_start();
            let is_attr = prev_sig == Some('.');
            if after.starts_with('(') && !is_attr {
                out.push((src[i..end].to_string(), i..end));
            }
            prev_sig = Some('a');
            continue;
        }
        if !c.is_whitespace() {
            prev_sig = Some(c);
        }
    }
    out
}

/// The function the assertions exercise: the first candidate call of the
/// first assertion that every assertion makes, else the first candidate.
pub fn assertion_callee(assertions: &[String]) -> Option<String> {
    let per: Vec<Vec<String>> = assertions
        .iter()
        .map(|a| {
            call_sites(a)
                .into_iter()
                .map(|(n, _)| n)
                .filter(|n| !NOT_CALLEES.contains(&n.as_str()))
                .collect()
        })
        .collect();
    let first = per.first()?;
    first
        .iter()
        .find(|name| per.iter().all(|calls| calls.contains(name)))
        .or_else(|| first.first())
        .cloned()
}

fn substitute(assertion: &str, from: &str, to: &str) -> String {
    let mut out = String::with_capacity(assertion.len());
    let mut last = 0;
    for (name, range) in call_sites(assertion) {
        if name == from {
            out.push_str(&assertion[last..range.start]);
            out.push_str(to);
            last = range.end;
        }
    }
    out.push_str(&assertion[last..]);
    out
}

/// Point the task's assertions at the generated code.
///
/// If the program already defines the callee the assertions are unchanged;
/// otherwise the last top-level function is substituted.
pub fn rewrite_assertions(
    program: &ExtractedProgram,
    task: &Task,
) -> Result<RewrittenSuite, RewriteError> {
    if !program.complete {
        return Err(RewriteError::Incomplete);
    }
    let entry = program.entry_point().ok_or(RewriteError::Incomplete)?;
    let callee = assertion_callee(&task.assertions);
    let (assertions, entry_point, renamed) = match &callee {
        Some(name) if program.function_names.iter().any(|f| f == name) => {
            (task.assertions.clone(), name.clone(), false)
        }
        Some(name) => (
            task.assertions
                .iter()
                .map(|a| substitute(a, name, entry))
                .collect(),
            entry.to_string(),
            true,
        ),
        None => (task.assertions.clone(), entry.to_string(), false),
    };
    Ok(RewrittenSuite {
        program: program.code.clone(),
        assertions,
        callee,
        entry_point,
        renamed,
    })
}
