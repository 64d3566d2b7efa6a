//! Reports recomputed from persisted outcomes.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use polyglot_core::codeexec::OutcomeRecord;
use polyglot_core::jsonl;
use polyglot_core::metrics::{
    compute_rates, gap_vs_english, render_report, tally, MetricsError, MetricsRow, ReportFormat,
};

use crate::evaluate::{Manifest, MANIFEST, OUTCOMES};

/// Rows plus English-gap tables when every (model, mode) group has a reference.
pub fn render_rows(rows: &[MetricsRow], format: ReportFormat) -> Result<String> {
    let gaps = match gap_vs_english(rows) {
        Ok(g) => Some(g),
        Err(MetricsError::MissingEnglish { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(render_report(rows, gaps.as_ref(), format)?)
}

pub fn read_manifest(run_dir: &Path) -> Result<Manifest> {
    let path = run_dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Metrics rows of a run, recomputed from its outcomes files.
pub fn rows_from_run(run_dir: &Path) -> Result<Vec<MetricsRow>> {
    let manifest = read_manifest(run_dir)?;
    let mut rows = Vec::new();
    for lang in &manifest.langs {
        let path = run_dir.join(manifest.mode.as_str()).join(lang.code()).join(OUTCOMES);
        let records: Vec<OutcomeRecord> = jsonl::read(&path)
            .with_context(|| format!("reading {}", path.display()))?
            .into_iter()
            .map(|n| n.value)
            .collect();
        if records.is_empty() {
            continue;
        }
        rows.push(compute_rates(&manifest.model.name, *lang, manifest.mode, tally(&records)?)?);
    }
    Ok(rows)
}

/// Merge several runs (for example an orig and a cot run) into one report.
pub fn report_runs(run_dirs: &[&Path], format: ReportFormat) -> Result<String> {
    let mut rows = Vec::new();
    for dir in run_dirs {
        rows.extend(rows_from_run(dir)?);
    }
    render_rows(&rows, format)
}
