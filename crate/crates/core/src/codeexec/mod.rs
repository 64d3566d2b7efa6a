//! From raw model response to classified execution outcome.
//!
//! The pipeline is: [`extract_code`] pulls Python out of the response,
//! [`rewrite_assertions`] points the task's assertions at the generated entry
//! point, and the sandbox (feature `sandbox`) runs each assertion in its own
//! interpreter process.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Lang;

mod extract;
mod rewrite;
#[cfg(feature = "sandbox")]
mod sandbox;
mod scripts;

pub use extract::{
    dedent, extract_code, extract_code_from_text, function_names, split_fences, Fence,
};
pub use rewrite::{assertion_callee, call_sites, rewrite_assertions, RewriteError, RewrittenSuite};
#[cfg(feature = "sandbox")]
pub use sandbox::{
    classify_batch, classify_response, execute_sandboxed, Classified, PythonChecker, Sandbox,
    SandboxConfig, WorkDirPolicy,
};
pub use scripts::{render_script, script_file_name};

/// Generation mode of a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Prompt sent as-is.
    Orig,
    /// Prompt back-translated to English first.
    Cot,
    /// Model fine-tuned on bootstrapped data.
    Bft,
    /// Projected multilingual embeddings.
    Lp,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Orig, Mode::Cot, Mode::Bft, Mode::Lp];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Orig => "orig",
            Mode::Cot => "cot",
            Mode::Bft => "bft",
            Mode::Lp => "lp",
        }
    }

    /// Column label used in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            Mode::Orig => "Orig.",
            Mode::Cot => "CoT",
            Mode::Bft => "BFT",
            Mode::Lp => "LP",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "orig" => Ok(Mode::Orig),
            "cot" => Ok(Mode::Cot),
            "bft" => Ok(Mode::Bft),
            "lp" => Ok(Mode::Lp),
            other => Err(format!("unknown mode `{other}` (expected orig, cot, bft or lp)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub task_id: String,
    pub lang: Lang,
    pub mode: Mode,
    pub raw_text: String,
}

impl ModelResponse {
    pub fn sort_key(&self) -> (&str, Lang, Mode) {
        (&self.task_id, self.lang, self.mode)
    }
}

/// Code recovered from a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedProgram {
    pub code: String,
    /// Top-level function names in definition order.
    pub function_names: Vec<String>,
    pub parses: bool,
    /// Non-empty, parseable and defines at least one function.
    pub complete: bool,
}

impl ExtractedProgram {
    pub fn empty() -> Self {
        Self {
            code: String::new(),
            function_names: Vec::new(),
            parses: false,
            complete: false,
        }
    }

    pub fn has_code(&self) -> bool {
        !self.code.trim().is_empty()
    }

    /// The function substituted into assertions when the expected name is absent.
    pub fn entry_point(&self) -> Option<&str> {
        self.function_names.last().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeClass {
    SyntaxError,
    LogicalFailure,
    AllPassed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssertionResult {
    Pass,
    Fail,
    Error,
    Timeout,
    NotRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub class: OutcomeClass,
    pub per_assertion: Vec<AssertionResult>,
    /// Seconds per assertion process; zero for assertions that never ran.
    pub wall_times: Vec<f64>,
    /// Truncated stderr per assertion, empty when nothing ran.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl ExecutionOutcome {
    pub fn syntax_error(n: usize) -> Self {
        Self {
            class: OutcomeClass::SyntaxError,
            per_assertion: vec![AssertionResult::NotRun; n],
            wall_times: vec![0.0; n],
            diagnostics: Vec::new(),
        }
    }

    /// No usable code: counted as a logical failure with nothing executed.
    pub fn no_code(n: usize) -> Self {
        Self {
            class: OutcomeClass::LogicalFailure,
            per_assertion: vec![AssertionResult::NotRun; n],
            wall_times: vec![0.0; n],
            diagnostics: Vec::new(),
        }
    }

    pub fn from_results(per_assertion: Vec<AssertionResult>, wall_times: Vec<f64>) -> Self {
        let class = if !per_assertion.is_empty()
            && per_assertion.iter().all(|r| *r == AssertionResult::Pass)
        {
            OutcomeClass::AllPassed
        } else {
            OutcomeClass::LogicalFailure
        };
        Self {
            class,
            per_assertion,
            wall_times,
            diagnostics: Vec::new(),
        }
    }
}

/// One line of the outcomes file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub task_id: String,
    pub lang: Lang,
    pub mode: Mode,
    pub class: OutcomeClass,
    pub per_assertion: Vec<AssertionResult>,
    pub complete: bool,
    pub entry_point: Option<String>,
}

impl OutcomeRecord {
    pub fn new(
        response: &ModelResponse,
        program: &ExtractedProgram,
        outcome: &ExecutionOutcome,
        entry_point: Option<String>,
    ) -> Self {
        Self {
            task_id: response.task_id.clone(),
            lang: response.lang,
            mode: response.mode,
            class: outcome.class,
            per_assertion: outcome.per_assertion.clone(),
            complete: program.complete,
            entry_point,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("interpreter `{0}` not found; set the sandbox interpreter command")]
    InterpreterNotFound(String),
    #[error("sandbox infrastructure failure: {0}")]
    Infrastructure(String),
    #[error("task `{0}` not found in corpus")]
    UnknownTask(String),
}

impl From<std::io::Error> for ExecError {
    fn from(e: std::io::Error) -> Self {
        ExecError::Infrastructure(e.to_string())
    }
}

/// Parse-only check in the target language's toolchain.
pub trait SyntaxChecker: Send + Sync {
    fn parses(&self, code: &str) -> Result<bool, ExecError>;

    /// Largest `k` such that `lines[..k]` parses; 0 when no non-empty prefix does.
    fn longest_parsing_prefix(&self, lines: &[&str]) -> Result<usize, ExecError> {
        for k in (1..=lines.len()).rev() {
            if self.parses(&lines[..k].join("\n"))? {
                return Ok(k);
            }
        }
        Ok(0)
    }
}
