//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string; errors come back as `{"error": ...}`.

use nalgebra::DMatrix;
use polyglot_core::align::{build_training_pairs, EmbeddingTable, SubwordMap};
use polyglot_core::bootstrap::bleu_sentence;
use polyglot_core::codeexec::Mode;
use polyglot_core::metrics::{compute_rates, OutcomeTally};
use polyglot_core::projector::{train_mse, Activation, Optimizer, TrainConfig};
use polyglot_core::xlingual::NearestTokenDecoder;
use polyglot_core::Lang;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

/// Sentence BLEU of `candidate` against `reference` with per-order precisions.
#[wasm_bindgen]
pub fn bleu(candidate: &str, reference: &str) -> String {
    to_json(bleu_sentence(candidate, reference).map_err(|e| e.to_string()))
}

/// Error and pass rates for a tally of classified samples.
#[wasm_bindgen]
pub fn rates(syntax: u32, logical: u32, passed: u32, complete: u32) -> String {
    to_json(rates_impl(syntax.into(), logical.into(), passed.into(), complete.into()))
}

pub fn rates_impl(syntax: u64, logical: u64, passed: u64, complete: u64) -> Result<serde_json::Value, String> {
    let n = syntax + logical + passed;
    let tally = OutcomeTally::new(n, syntax, logical, passed, complete).map_err(|e| e.to_string())?;
    let row = compute_rates("demo", Lang::En, Mode::Orig, tally).map_err(|e| e.to_string())?;
    Ok(serde_json::json!({
        "n": n,
        "total_er": row.total_er_pct,
        "ler": row.ler_pct,
        "ser": row.ser_pct,
        "atpr": row.atpr_pct,
        "ccr": row.ccr_pct,
    }))
}

#[derive(Debug, Serialize)]
pub struct TransferReport {
    pub words: usize,
    pub noise_ratio: f64,
    pub final_mse: f64,
    pub per_lang: Vec<(String, usize, usize)>,
    pub samples: Vec<(String, String)>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Train a projector on English words only, then decode projected
/// non-English encoder vectors to their nearest LLM token.
///
/// Each concept has one centre in a 16-d encoder space; every language's
/// surface form sits at distance `noise_ratio * min_centre_gap` from it.
#[wasm_bindgen]
pub fn zero_shot(words: u32, noise_ratio: f64, seed: u32) -> String {
    to_json(zero_shot_impl(words as usize, noise_ratio, seed.into()))
}

pub fn zero_shot_impl(k: usize, noise_ratio: f64, seed: u64) -> Result<TransferReport, String> {
    if !(2..=200).contains(&k) {
        return Err("words must be between 2 and 200".into());
    }
    if !(0.0..=2.0).contains(&noise_ratio) {
        return Err("noise ratio must be between 0 and 2".into());
    }
    let (d_enc, d_llm) = (16, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..k).map(|_| (0..d_enc).map(|_| gaussian(&mut rng)).collect()).collect();
    let mut gap = f64::INFINITY;
    for i in 0..k {
        for j in i + 1..k {
            let d: f64 = centres[i].iter().zip(&centres[j]).map(|(a, b)| (a - b).powi(2)).sum();
            gap = gap.min(d.sqrt());
        }
    }
    let radius = noise_ratio * gap;
    let langs = Lang::ALL;
    let mut enc_rows = Vec::new();
    for (ci, c) in centres.iter().enumerate() {
        for l in langs {
            let dir: Vec<f64> = (0..d_enc).map(|_| gaussian(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let v = c.iter().zip(&dir).map(|(a, d)| (a + radius * d / norm) as f32).collect();
            enc_rows.push((format!("{l}{ci}"), v));
        }
    }
    let m = DMatrix::from_fn(d_llm, d_enc, |_, _| gaussian(&mut rng));
    let mut llm_rows = Vec::new();
    let mut subwords = SubwordMap::new();
    for (ci, c) in centres.iter().enumerate() {
        let y = &m * DMatrix::from_column_slice(d_enc, 1, c);
        llm_rows.push((format!("\u{2581}en{ci}"), y.iter().map(|&v| v as f32).collect()));
        subwords
            .insert(format!("en{ci}"), vec![format!("\u{2581}en{ci}")])
            .map_err(|e| e.to_string())?;
    }
    let laser = EmbeddingTable::new("encoder", d_enc, false, enc_rows).map_err(|e| e.to_string())?;
    let llm = EmbeddingTable::new("llm", d_llm, false, llm_rows).map_err(|e| e.to_string())?;

    let english: Vec<String> = (0..k).map(|ci| format!("en{ci}")).collect();
    let pairs = build_training_pairs(&english, &laser, &llm, &subwords).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 1000,
        learning_rate: 1e-2,
        batch_size: 0,
        seed,
        optimizer: Optimizer::Adam,
        hidden: 32,
        activation: Activation::Identity,
    };
    let (proj, report) = train_mse(&pairs.pairs, &cfg).map_err(|e| e.to_string())?;

    let decoder = NearestTokenDecoder::new(&llm);
    let mut per_lang = Vec::new();
    let mut samples = Vec::new();
    for l in &langs[1..] {
        let mut hits = 0;
        for ci in 0..k {
            let word = format!("{l}{ci}");
            let x: Vec<f64> = laser.get(&word).ok_or("missing row")?.iter().map(|&v| v as f64).collect();
            let y = proj.project(&x).map_err(|e| e.to_string())?;
            let tok = decoder.nearest(&y).map_err(|e| e.to_string())?;
            if tok == format!("\u{2581}en{ci}") {
                hits += 1;
            }
            if ci < 3 {
                samples.push((word, tok.to_string()));
            }
        }
        per_lang.push((l.to_string(), hits, k));
    }
    Ok(TransferReport { words: k, noise_ratio, final_mse: report.final_mse, per_lang, samples })
}
