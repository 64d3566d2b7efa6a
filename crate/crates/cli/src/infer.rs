//! Single-prompt inference in any mode.

use std::path::Path;

use anyhow::{bail, Result};
use polyglot_core::align::{load_table, SubwordMap};
use polyglot_core::codeexec::{Mode, ModelResponse};
use polyglot_core::llmgateway::GatewayError;
use polyglot_core::projector::Projector;
use polyglot_core::xlingual::{build_input_embeddings, zero_shot_infer, LpStack, SequenceCoverage, ToyDecoder};
use polyglot_core::Lang;
use serde::Serialize;

use crate::config::{LpSection, RunConfig};

#[derive(Debug, Clone, Serialize)]
pub struct InferOutput {
    pub response: ModelResponse,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<SequenceCoverage>,
}

/// Projected-input inference through the toy decoder; optionally saves the input sequence.
pub fn infer_lp(lp: &LpSection, lang: Lang, prompt: &str, embeddings_out: Option<&Path>) -> Result<InferOutput> {
    let laser = load_table(&lp.laser)?;
    let projector = Projector::load(&lp.projector)?;
    let subwords = lp.subwords.as_deref().map(SubwordMap::load).transpose()?;
    let model = ToyDecoder::new(lp.toy)?;
    let llm_table = model.embedding_table();
    if let Some(path) = embeddings_out {
        build_input_embeddings(&lp.system_prompt, prompt, lang, &laser, &projector, &llm_table, subwords.as_ref())?
            .save(path)?;
    }
    let stack = LpStack {
        laser: &laser,
        projector: &projector,
        llm_table: &llm_table,
        subwords: subwords.as_ref(),
        model: &model,
        system_prompt: lp.system_prompt.clone(),
        max_new_tokens: lp.max_new_tokens,
    };
    let (response, coverage) = zero_shot_infer("prompt", prompt, lang, &stack)?;
    Ok(InferOutput {
        response,
        coverage: Some(coverage),
    })
}

/// Orig, CoT or BFT inference through the configured gateway.
pub fn infer_gateway(cfg: &RunConfig, mode: Mode, lang: Lang, prompt: &str) -> Result<InferOutput> {
    let gateway = cfg.gateway()?;
    let profile = cfg.profile();
    let text = match mode {
        Mode::Orig | Mode::Bft => prompt.to_string(),
        Mode::Cot if lang == Lang::En => return Err(GatewayError::CotUndefinedForEnglish.into()),
        Mode::Cot => gateway.backtranslate_prompt(&profile, prompt, lang)?,
        Mode::Lp => bail!("lp inference runs through the projector stack"),
    };
    let raw_text = gateway.complete(&profile.request(text))?.text()?.to_string();
    Ok(InferOutput {
        response: ModelResponse {
            task_id: "prompt".into(),
            lang,
            mode,
            raw_text,
        },
        coverage: None,
    })
}
