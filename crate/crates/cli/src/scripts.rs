//! Standalone per-sample shell scripts.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use polyglot_core::codeexec::{
    extract_code, render_script, rewrite_assertions, script_file_name, Classified, ModelResponse,
    SyntaxChecker,
};
use polyglot_core::corpus::{Corpus, Task};
use polyglot_core::jsonl;

use crate::evaluate::RESPONSES;
use crate::report::read_manifest;

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptItem {
    pub response: ModelResponse,
    pub program: String,
    pub assertions: Vec<String>,
}

impl ScriptItem {
    /// Rewritten suite when there is one, else the raw extraction with the task's own assertions.
    pub fn from_classified(c: &Classified, corpus: &Corpus) -> Option<Self> {
        let (program, assertions) = match &c.suite {
            Some(s) => (s.program.clone(), s.assertions.clone()),
            None => (c.program.code.clone(), corpus.task(&c.response.task_id)?.assertions.clone()),
        };
        Some(Self {
            response: c.response.clone(),
            program,
            assertions,
        })
    }

    pub fn extract(response: &ModelResponse, task: &Task, checker: &dyn SyntaxChecker) -> Result<Self> {
        let program = extract_code(response, checker)?;
        let (program, assertions) = match rewrite_assertions(&program, task) {
            Ok(s) => (s.program, s.assertions),
            Err(_) => (program.code, task.assertions.clone()),
        };
        Ok(Self {
            response: response.clone(),
            program,
            assertions,
        })
    }
}

/// Write one executable script per item; returns the number written.
pub fn write_scripts(dir: &Path, items: &[ScriptItem], interpreter: &str) -> Result<usize> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for item in items {
        let path = dir.join(script_file_name(&item.response));
        let body = render_script(&item.response, interpreter, &item.program, &item.assertions);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            fs::set_permissions(&path, fs::Permissions::from_mode(0o755))?;
        }
    }
    Ok(items.len())
}

/// Scripts for every stored response of a finished run.
pub fn export_run_scripts(
    run_dir: &Path,
    corpus: &Corpus,
    checker: &dyn SyntaxChecker,
    interpreter: &str,
    out: &Path,
) -> Result<usize> {
    let manifest = read_manifest(run_dir)?;
    let mut items = Vec::new();
    for lang in &manifest.langs {
        let path = run_dir.join(manifest.mode.as_str()).join(lang.code()).join(RESPONSES);
        for n in jsonl::read::<ModelResponse>(&path)? {
            let task = corpus
                .task(&n.value.task_id)
                .with_context(|| format!("{}:{}: unknown task {}", path.display(), n.line, n.value.task_id))?;
            items.push(ScriptItem::extract(&n.value, task, checker)?);
        }
    }
    write_scripts(out, &items, interpreter)
}
