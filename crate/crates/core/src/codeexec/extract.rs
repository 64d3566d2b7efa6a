use std::sync::OnceLock;

use regex::Regex;

use super::{ExecError, ExtractedProgram, ModelResponse, SyntaxChecker};

/// Fence info-string tags accepted as Python.
const PYTHON_TAGS: &[&str] = &["python", "python3", "py", "py3"];

fn def_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:async[ \t]+)?def[ \t]+[^\W\d]\w*[ \t]*\(").unwrap())
}

fn top_level_def() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^(?:async[ \t]+)?def[ \t]+([^\W\d]\w*)[ \t]*\(").unwrap()
    })
}

fn any_def() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*(?:async[ \t]+)?def[ \t]+\w+").unwrap())
}

/// A fenced block of a markdown response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fence {
    /// Lower-cased first word of the info string; empty when untagged.
    pub tag: String,
    pub body: String,
}

/// Split markdown fences out of `text`. An unterminated fence runs to the end.
pub fn split_fences(text: &str) -> Vec<Fence> {
    let mut fences = Vec::new();
    let mut current: Option<(String, String, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        match current.as_mut() {
            None => {
                let marker = if trimmed.starts_with("```") {
                    "```"
                } else if trimmed.starts_with("~~~") {
                    "~~~"
                } else {
                    continue;
                };
                let info = trimmed.trim_start_matches(marker.chars().next().unwrap());
                let tag = info
                    .split_whitespace()
                    .next()
                    .unwrap_or("")
                    .trim_start_matches('{')
                    .trim_start_matches('.')
                    .trim_end_matches('}')
                    .to_lowercase();
                current = Some((marker.to_string(), tag, Vec::new()));
            }
            Some((marker, _, body)) => {
                if trimmed.starts_with(marker.as_str())
                    && trimmed.trim_start_matches(marker.chars().next().unwrap()).trim().is_empty()
                {
                    let (_, tag, body) = current.take().unwrap();
                    fences.push(Fence {
                        tag,
                        body: body.join("\n"),
                    });
                } else {
                    body.push(line);
                }
            }
        }
    }
    if let Some((_, tag, body)) = current {
        fences.push(Fence {
            tag,
            body: body.join("\n"),
        });
    }
    fences
}

/// Remove the common leading whitespace of all non-blank lines.
pub fn dedent(code: &str) -> String {
    let indent = code
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    code.lines()
        .map(|l| if l.len() >= indent { &l[indent..] } else { l.trim_start() })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Top-level (column 0) function identifiers in definition order.
pub fn function_names(code: &str) -> Vec<String> {
    top_level_def()
        .captures_iter(code)
        .map(|c| c[1].to_string())
        .collect()
}

/// Recover the Python program from a model response.
///
/// Rules in priority order: all Python-tagged fences concatenated; else every
/// untagged fence that defines a function; else, when the response has no
/// fences at all, the longest parseable run of lines starting at the first
/// `def`. Only checker failures are errors.
pub fn extract_code(
    response: &ModelResponse,
    checker: &dyn SyntaxChecker,
) -> Result<ExtractedProgram, ExecError> {
    extract_code_from_text(&response.raw_text, checker)
}

/// [`extract_code`] over bare text.
pub fn extract_code_from_text(
    raw: &str,
    checker: &dyn SyntaxChecker,
) -> Result<ExtractedProgram, ExecError> {
    let text = raw.replace("\r\n", "\n");
    let fences = split_fences(&text);

    let code = if !fences.is_empty() {
        let tagged: Vec<String> = fences
            .iter()
            .filter(|f| PYTHON_TAGS.contains(&f.tag.as_str()))
            .map(|f| dedent(&f.body))
            .collect();
        if !tagged.is_empty() {
            tagged.join("\n\n")
        } else {
            fences
                .iter()
                .filter(|f| f.tag.is_empty() && any_def().is_match(&f.body))
                .map(|f| dedent(&f.body))
                .collect::<Vec<_>>()
                .join("\n\n")
        }
    } else {
        unfenced_region(&text, checker)?
    };

    if code.trim().is_empty() {
        return Ok(ExtractedProgram::empty());
    }
    let parses = checker.parses(&code)?;
    let function_names = function_names(&code);
    let complete = parses && !function_names.is_empty();
    Ok(ExtractedProgram {
        code,
        function_names,
        parses,
        complete,
    })
}

fn unfenced_region(text: &str, checker: &dyn SyntaxChecker) -> Result<String, ExecError> {
    let lines: Vec<&str> = text.lines().collect();
    let Some(start) = lines.iter().position(|l| def_line().is_match(l)) else {
        return Ok(String::new());
    };
    let tail = &lines[start..];
    let k = checker.longest_parsing_prefix(tail)?;
    // Nothing parses: keep the whole tail so the response is scored as a syntax error.
    let region = if k == 0 { tail } else { &tail[..k] };
    Ok(region.join("\n").trim_end().to_string())
}
