//! `train-projector`: fit the projector on English word pairs.

use std::path::PathBuf;

use anyhow::{Context, Result};
use polyglot_core::align::{build_training_pairs, load_table, read_pairs, write_pairs, Coverage, SubwordMap, TrainingPair};
use polyglot_core::corpus::Task;
use polyglot_core::jsonl;
use polyglot_core::projector::{ols_fit, train_mse, TrainConfig, TrainReport, DEFAULT_RIDGE};
use serde::Serialize;

#[derive(Debug, Clone)]
pub enum PairSource {
    /// Pairs JSONL written earlier.
    File(PathBuf),
    /// Build pairs from the English prompts of a tasks file.
    Build {
        tasks: PathBuf,
        laser: PathBuf,
        llm: PathBuf,
        subwords: PathBuf,
        save_pairs: Option<PathBuf>,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub source: PairSource,
    pub config: TrainConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub report: TrainReport,
    /// Closed-form affine fit on the same pairs, for reference.
    pub ols_mse: Option<f64>,
    pub coverage: Option<Coverage>,
    pub projector: PathBuf,
}

fn load_pairs(source: &PairSource) -> Result<(Vec<TrainingPair>, Option<Coverage>)> {
    match source {
        PairSource::File(p) => Ok((read_pairs(p).with_context(|| format!("reading {}", p.display()))?, None)),
        PairSource::Build { tasks, laser, llm, subwords, save_pairs } => {
            let texts: Vec<String> = jsonl::read::<Task>(tasks)?
                .into_iter()
                .map(|n| n.value.prompt_en)
                .collect();
            let set = build_training_pairs(&texts, &load_table(laser)?, &load_table(llm)?, &SubwordMap::load(subwords)?)?;
            if let Some(path) = save_pairs {
                write_pairs(path, &set.pairs)?;
            }
            Ok((set.pairs, Some(set.coverage)))
        }
    }
}

pub fn train_projector(opts: &TrainOptions) -> Result<TrainSummary> {
    let (pairs, coverage) = load_pairs(&opts.source)?;
    let (projector, report) = train_mse(&pairs, &opts.config)?;
    projector
        .save(&opts.out)
        .with_context(|| format!("writing {}", opts.out.display()))?;
    let ols_mse = ols_fit(&pairs, DEFAULT_RIDGE).ok().map(|f| f.mse);
    Ok(TrainSummary {
        report,
        ols_mse,
        coverage,
        projector: opts.out.clone(),
    })
}
