//! The `bootstrap` pipeline: generate, round-trip filter, emit a fine-tuning dataset.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use polyglot_core::bootstrap::{
    emit_dataset, english_records, generate_candidates, round_trip_filter, BootstrapError,
    DatasetMeta, RoundTrip, TrainingRecord,
};
use polyglot_core::codeexec::Sandbox;
use polyglot_core::{jsonl, Lang};

use crate::config::RunConfig;

pub const DATASET: &str = "dataset.jsonl";
pub const AUDIT: &str = "audit.jsonl";
pub const CANDIDATES: &str = "candidates.jsonl";

#[derive(Debug, Clone)]
pub struct BootstrapSummary {
    pub out_dir: PathBuf,
    pub candidates: usize,
    pub audit: Vec<RoundTrip>,
    pub accepted: BTreeMap<Lang, usize>,
    pub meta: DatasetMeta,
    pub warnings: Vec<String>,
}

fn write_jsonl<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<()> {
    jsonl::write(path, records).with_context(|| format!("writing {}", path.display()))
}

/// Drive the bootstrap for every target language and write all artifacts to `out`.
///
/// The run seed and worker count override the `[bootstrap]` section. The audit
/// log is written even when nothing passes the filter.
pub fn run_bootstrap(cfg: &RunConfig, out: &Path) -> Result<BootstrapSummary> {
    cfg.validate()?;
    let mut b = cfg.bootstrap.clone();
    b.seed = cfg.seed;
    b.max_in_flight = cfg.workers;
    b.validate()?;
    let gateway = cfg.gateway()?;
    let profile = cfg.profile();
    let checker = Sandbox::new(cfg.sandbox.clone())?;
    fs::create_dir_all(out.join("partitions")).with_context(|| format!("creating {}", out.display()))?;

    let candidates = generate_candidates(&b, &gateway, &profile, &checker)?;
    write_jsonl(&out.join(CANDIDATES), &candidates.pairs)?;

    let english = english_records(&candidates.pairs);
    write_jsonl(&out.join("partitions").join("en.jsonl"), &english)?;
    let mut audit = Vec::new();
    let mut translated: Vec<TrainingRecord> = Vec::new();
    let mut accepted = BTreeMap::new();
    let mut langs = b.target_langs.clone();
    langs.sort();
    langs.dedup();
    for lang in langs {
        let f = round_trip_filter(&candidates.pairs, lang, &b, &gateway, &profile)?;
        write_jsonl(&out.join("partitions").join(format!("{lang}.jsonl")), &f.data)?;
        accepted.insert(lang, f.data.len());
        translated.extend(f.data);
        audit.extend(f.audit);
    }
    write_jsonl(&out.join(AUDIT), &audit)?;
    if !candidates.warnings.is_empty() {
        fs::write(out.join("warnings.txt"), candidates.warnings.join("\n") + "\n")?;
    }
    if let Some(t) = gateway.transcript() {
        t.write(out.join("transcript.jsonl"))?;
    }
    if translated.is_empty() {
        return Err(BootstrapError::EmptyDataset)
            .context(format!("no round trip scored above {}", b.threshold));
    }

    let mut data = english;
    data.extend(translated);
    let meta = emit_dataset(&data, &out.join(DATASET), b.seed, b.threshold)?;
    Ok(BootstrapSummary {
        out_dir: out.to_path_buf(),
        candidates: candidates.pairs.len(),
        audit,
        accepted,
        meta,
        warnings: candidates.warnings,
    })
}
