//! Round-trip translation bootstrapping of multilingual training data.
//!
//! Problems are generated by the model, answered by the model, translated
//! into each target language and back, and kept when the back-translation
//! scores above a BLEU threshold against the original English.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::codeexec::{extract_code_from_text, ExecError, SyntaxChecker};
use crate::llmgateway::{ChatRequest, Gateway, GatewayError, ModelProfile};
use crate::Lang;

pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const RELAXED_THRESHOLD: f64 = 0.8;
pub const DEFAULT_GEN_PROMPT: &str = "Generate 100 python problems";
pub const FINETUNE_TEMPERATURE: f64 = 0.8;
pub const FINETUNE_EPOCHS: u32 = 2;
pub const SMOOTHING: &str = "add-one on zero clipped counts for n >= 2";

const MAX_ORDER: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum BootstrapError {
    #[error("{0} is empty after tokenization")]
    EmptyTokenization(&'static str),
    #[error("invalid bootstrap config: {0}")]
    InvalidConfig(String),
    #[error("all {0} generation attempts returned no problems")]
    NoGenerations(usize),
    #[error("round-trip filtering needs a non-English target language")]
    EnglishTarget,
    #[error("refusing to write an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Lowercased word and punctuation tokens.
pub fn bleu_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    /// Smoothed modified precisions p1..p4.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub candidate_len: usize,
    pub reference_len: usize,
    pub smoothing: String,
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU with clipped counts up to 4-grams and a brevity penalty.
///
/// An order with no clipped matches scores `1 / (total + 1)` when n >= 2;
/// zero unigram matches give a score of 0.
pub fn bleu_sentence(candidate: &str, reference: &str) -> Result<BleuScore, BootstrapError> {
    let cand = bleu_tokenize(candidate);
    let refr = bleu_tokenize(reference);
    if cand.is_empty() {
        return Err(BootstrapError::EmptyTokenization("candidate"));
    }
    if refr.is_empty() {
        return Err(BootstrapError::EmptyTokenization("reference"));
    }
    Ok(bleu_tokens(&cand, &refr))
}

pub fn bleu_tokens(cand: &[String], refr: &[String]) -> BleuScore {
    let mut precisions = [0.0; MAX_ORDER];
    for n in 1..=MAX_ORDER {
        let c = ngram_counts(cand, n);
        let r = ngram_counts(refr, n);
        let total: usize = c.values().sum();
        let clipped: usize = c
            .iter()
            .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
            .sum();
        precisions[n - 1] = if clipped > 0 {
            clipped as f64 / total as f64
        } else if n == 1 {
            0.0
        } else {
            1.0 / (total as f64 + 1.0)
        };
    }
    let (c, r) = (cand.len() as f64, refr.len() as f64);
    let brevity_penalty = if c <= r { (1.0 - r / c).exp() } else { 1.0 };
    let score = if precisions[0] == 0.0 {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        (brevity_penalty * mean_log.exp()).clamp(0.0, 1.0)
    };
    BleuScore {
        score,
        precisions,
        brevity_penalty,
        candidate_len: cand.len(),
        reference_len: refr.len(),
        smoothing: SMOOTHING.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub n_attempts: usize,
    pub threshold: f64,
    pub target_langs: Vec<Lang>,
    pub gen_prompt: String,
    pub seed: u64,
    pub max_in_flight: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_attempts: 1,
            threshold: DEFAULT_THRESHOLD,
            target_langs: Lang::TRANSLATED.to_vec(),
            gen_prompt: DEFAULT_GEN_PROMPT.into(),
            seed: 0,
            max_in_flight: 4,
        }
    }
}

impl BootstrapConfig {
    /// Same settings with the 0.8 acceptance threshold.
    pub fn relaxed() -> Self {
        Self {
            threshold: RELAXED_THRESHOLD,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BootstrapError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(BootstrapError::InvalidConfig(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if self.n_attempts == 0 {
            return Err(BootstrapError::InvalidConfig("n_attempts must be at least 1".into()));
        }
        if self.max_in_flight == 0 {
            return Err(BootstrapError::InvalidConfig("max_in_flight must be at least 1".into()));
        }
        if self.target_langs.contains(&Lang::En) {
            return Err(BootstrapError::EnglishTarget);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub q: String,
    pub a: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidates {
    pub pairs: Vec<CandidatePair>,
    /// Why problems or answers were dropped.
    pub warnings: Vec<String>,
}

fn list_item() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+\s*[.):]|[-*•])\s+(.+?)\s*$").unwrap())
}

/// Numbered or bulleted items of a generated problem list.
pub fn parse_problem_list(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| list_item().captures(l))
        .map(|c| c[1].replace("**", "").trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn generation_requests(cfg: &BootstrapConfig, profile: &ModelProfile) -> Vec<ChatRequest> {
    (0..cfg.n_attempts)
        .map(|i| {
            profile
                .request(cfg.gen_prompt.clone())
                .with_seed(Some(cfg.seed.wrapping_add(i as u64)))
        })
        .collect()
}

/// Generate problems, then ask for an answer to each one.
pub fn generate_candidates(
    cfg: &BootstrapConfig,
    gateway: &Gateway,
    profile: &ModelProfile,
    checker: &dyn SyntaxChecker,
) -> Result<Candidates, BootstrapError> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    let gens = gateway.batch(&generation_requests(cfg, profile), cfg.max_in_flight)?;
    for (i, r) in gens.into_iter().enumerate() {
        let text = match r.and_then(|resp| resp.text().map(str::to_string)) {
            Ok(t) => t,
            Err(e) => {
                warnings.push(format!("generation {i}: {e}"));
                continue;
            }
        };
        let items = parse_problem_list(&text);
        if items.is_empty() {
            warnings.push(format!("generation {i}: no problem list found"));
        }
        for q in items {
            if seen.insert(q.clone()) {
                problems.push(q);
            }
        }
    }
    if problems.is_empty() {
        return Err(BootstrapError::NoGenerations(cfg.n_attempts));
    }

    let answer_reqs: Vec<ChatRequest> = problems.iter().map(|q| profile.request(q.clone())).collect();
    let answers = gateway.batch(&answer_reqs, cfg.max_in_flight)?;
    let mut pairs = Vec::new();
    for (q, r) in problems.into_iter().zip(answers) {
        let text = match r.and_then(|resp| resp.text().map(str::to_string)) {
            Ok(t) => t,
            Err(e) => {
                warnings.push(format!("answer for {q:?}: {e}"));
                continue;
            }
        };
        let program = extract_code_from_text(&text, checker)?;
        if !program.has_code() {
            warnings.push(format!("answer for {q:?}: no code"));
        } else if !program.parses {
            warnings.push(format!("answer for {q:?}: code does not parse"));
        } else {
            pairs.push(CandidatePair { q, a: program.code });
        }
    }
    Ok(Candidates { pairs, warnings })
}

pub fn to_lang_instruction(lang: Lang) -> String {
    format!("Translate from English into {}", lang.english_name())
}

pub fn to_english_instruction(lang: Lang) -> String {
    format!("Translate from {} into English", lang.english_name())
}

/// One audited round trip. `accepted` is `bleu > threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub lang: Lang,
    pub q: String,
    pub t: Option<String>,
    pub bt: Option<String>,
    pub bleu: Option<f64>,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub prompt: String,
    pub completion: String,
    pub lang: Lang,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    pub data: Vec<TrainingRecord>,
    /// One entry per input pair, in input order.
    pub audit: Vec<RoundTrip>,
}

fn text_of(r: Result<crate::llmgateway::ChatResponse, GatewayError>) -> Result<String, String> {
    r.and_then(|resp| resp.text().map(|t| t.trim().to_string()))
        .map_err(|e| e.to_string())
}

/// Translate each question out and back, keeping pairs whose back-translation
/// scores above the threshold against the original.
pub fn round_trip_filter(
    pairs: &[CandidatePair],
    lang: Lang,
    cfg: &BootstrapConfig,
    gateway: &Gateway,
    profile: &ModelProfile,
) -> Result<FilterOutput, BootstrapError> {
    if lang == Lang::En {
        return Err(BootstrapError::EnglishTarget);
    }
    cfg.validate()?;
    let out_reqs: Vec<ChatRequest> = pairs
        .iter()
        .map(|p| profile.request_with_system(to_lang_instruction(lang), p.q.clone()))
        .collect();
    let ts: Vec<Result<String, String>> = gateway
        .batch(&out_reqs, cfg.max_in_flight)?
        .into_iter()
        .map(text_of)
        .collect();

    let back_idx: Vec<usize> = (0..pairs.len()).filter(|&i| ts[i].is_ok()).collect();
    let back_reqs: Vec<ChatRequest> = back_idx
        .iter()
        .map(|&i| {
            let t = ts[i].as_ref().expect("filtered to successes");
            profile.request_with_system(to_english_instruction(lang), t.clone())
        })
        .collect();
    let mut bts: Vec<Option<Result<String, String>>> = vec![None; pairs.len()];
    for (i, r) in back_idx.into_iter().zip(gateway.batch(&back_reqs, cfg.max_in_flight)?) {
        bts[i] = Some(text_of(r));
    }

    let mut out = FilterOutput::default();
    for (i, pair) in pairs.iter().enumerate() {
        let mut entry = RoundTrip {
            lang,
            q: pair.q.clone(),
            t: None,
            bt: None,
            bleu: None,
            accepted: false,
            error: None,
        };
        match (&ts[i], &bts[i]) {
            (Err(e), _) => entry.error = Some(format!("translation: {e}")),
            (Ok(t), Some(Err(e))) => {
                entry.t = Some(t.clone());
                entry.error = Some(format!("back-translation: {e}"));
            }
            (Ok(t), Some(Ok(bt))) => {
                entry.t = Some(t.clone());
                entry.bt = Some(bt.clone());
                match bleu_sentence(bt, &pair.q) {
                    Ok(b) => {
                        entry.bleu = Some(b.score);
                        entry.accepted = b.score > cfg.threshold;
                    }
                    Err(e) => entry.error = Some(e.to_string()),
                }
                if entry.accepted {
                    out.data.push(TrainingRecord {
                        prompt: t.clone(),
                        completion: pair.a.clone(),
                        lang,
                    });
                }
            }
            (Ok(_), None) => unreachable!("every successful translation is sent back"),
        }
        out.audit.push(entry);
    }
    Ok(out)
}

/// Re-apply a different threshold to an existing audit log.
pub fn accepted_at<'a>(audit: &'a [RoundTrip], threshold: f64) -> Vec<&'a RoundTrip> {
    audit
        .iter()
        .filter(|r| r.bleu.is_some_and(|b| b > threshold))
        .collect()
}

/// The English pairs themselves, which belong to the training set too.
pub fn english_records(pairs: &[CandidatePair]) -> Vec<TrainingRecord> {
    pairs
        .iter()
        .map(|p| TrainingRecord {
            prompt: p.q.clone(),
            completion: p.a.clone(),
            lang: Lang::En,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub threshold: f64,
    pub seed: u64,
    pub temperature: f64,
    pub epochs: u32,
    pub total: usize,
    pub per_lang: BTreeMap<Lang, usize>,
    pub bleu_smoothing: String,
}

impl DatasetMeta {
    pub fn new(threshold: f64, seed: u64, data: &[TrainingRecord]) -> Self {
        let mut per_lang = BTreeMap::new();
        for r in data {
            *per_lang.entry(r.lang).or_insert(0) += 1;
        }
        Self {
            threshold,
            seed,
            temperature: FINETUNE_TEMPERATURE,
            epochs: FINETUNE_EPOCHS,
            total: data.len(),
            per_lang,
            bleu_smoothing: SMOOTHING.into(),
        }
    }
}

/// Sidecar path: `data.jsonl` -> `data.jsonl.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Seeded shuffle of `data`.
pub fn shuffled(data: &[TrainingRecord], seed: u64) -> Vec<TrainingRecord> {
    let mut v = data.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

/// Write the shuffled dataset as JSONL plus its metadata sidecar.
pub fn emit_dataset(
    data: &[TrainingRecord],
    path: &Path,
    shuffle_seed: u64,
    threshold: f64,
) -> Result<DatasetMeta, BootstrapError> {
    if data.is_empty() {
        return Err(BootstrapError::EmptyDataset);
    }
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| BootstrapError::Io { path: p, source }
    };
    crate::jsonl::write(path, &shuffled(data, shuffle_seed)).map_err(io(path))?;
    let meta = DatasetMeta::new(threshold, shuffle_seed, data);
    let mp = meta_path(path);
    let body = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&mp, body + "\n").map_err(io(&mp))?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llmgateway::{ChatResponse, Transcript};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct ParenChecker;
    impl SyntaxChecker for ParenChecker {
        fn parses(&self, code: &str) -> Result<bool, ExecError> {
            Ok(code.matches('(').count() == code.matches(')').count() && !code.contains("(:"))
        }
    }

    #[test]
    fn identity_scores_one() {
        let b = bleu_sentence("the cat sat on the mat", "the cat sat on the mat").unwrap();
        assert_eq!(b.score, 1.0);
        assert_eq!(b.brevity_penalty, 1.0);
    }

    #[test]
    fn clipped_unigram_precision() {
        let b = bleu_sentence("the the the the the the the", "the cat is on the mat").unwrap();
        assert!((b.precisions[0] - 2.0 / 7.0).abs() < 1e-15);
        assert!((b.score - 0.19205612637498934).abs() < 1e-12);
    }

    #[test]
    fn short_candidate_is_penalized() {
        let b = bleu_sentence("the cat", "the cat sat on the mat").unwrap();
        assert!((b.brevity_penalty - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(bleu_tokenize("Hello, World!"), ["hello", ",", "world", "!"]);
        assert!(bleu_sentence("  ", "x").is_err());
        assert!(bleu_sentence("x", "...").is_ok());
    }

    #[test]
    fn disjoint_scores_zero() {
        assert_eq!(bleu_sentence("alpha beta", "gamma delta").unwrap().score, 0.0);
    }

    #[test]
    fn problem_list_parsing() {
        let text = "Here you go:\n1. Reverse a string.\n2) Sum a list\n- **Count vowels**\nThanks";
        assert_eq!(parse_problem_list(text), ["Reverse a string.", "Sum a list", "Count vowels"]);
        assert!(parse_problem_list("Sure, programming is fun.").is_empty());
    }

    fn profile() -> ModelProfile {
        ModelProfile::new("gen")
    }

    #[test]
    fn one_generation_request_per_attempt() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let g = Gateway::new(move |r: &ChatRequest| {
            if r.user_prompt == DEFAULT_GEN_PROMPT {
                c.fetch_add(1, Ordering::SeqCst);
                Ok(ChatResponse::stop(format!("1. problem {}", r.seed.unwrap())))
            } else {
                Ok(ChatResponse::stop("```python\ndef f(x):\n    return x\n```"))
            }
        });
        let cfg = BootstrapConfig { n_attempts: 2, ..Default::default() };
        let c = generate_candidates(&cfg, &g, &profile(), &ParenChecker).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        assert_eq!(c.pairs.len(), 2);
    }

    #[test]
    fn prose_only_generation_is_an_error() {
        let g = Gateway::new(|_: &ChatRequest| Ok(ChatResponse::stop("I like Python.")));
        let err = generate_candidates(&BootstrapConfig::default(), &g, &profile(), &ParenChecker);
        assert!(matches!(err, Err(BootstrapError::NoGenerations(1))));
    }

    #[test]
    fn unparseable_answers_are_dropped_with_reason() {
        let g = Gateway::new(|r: &ChatRequest| {
            Ok(ChatResponse::stop(match r.user_prompt.as_str() {
                DEFAULT_GEN_PROMPT => "1. good\n2. bad\n3. prose",
                "good" => "```python\ndef g():\n    return 1\n```",
                "bad" => "```python\ndef b(:\n```",
                _ => "no idea",
            }))
        });
        let c = generate_candidates(&BootstrapConfig::default(), &g, &profile(), &ParenChecker).unwrap();
        assert_eq!(c.pairs.len(), 1);
        assert_eq!(c.warnings.len(), 2);
    }

    fn round_trip_gateway(q: &str, t: &str, bt: &str, lang: Lang) -> Gateway {
        let p = profile();
        Gateway::replay(Transcript::from_pairs([
            (p.request_with_system(to_lang_instruction(lang), q), ChatResponse::stop(t)),
            (p.request_with_system(to_english_instruction(lang), t), ChatResponse::stop(bt)),
        ]))
    }

    #[test]
    fn threshold_decides_acceptance() {
        let q = "write a function that returns the sum of two numbers";
        let bt = "write a function that returns the sum of two integers";
        let score = bleu_sentence(bt, q).unwrap().score;
        assert!(score > 0.8 && score < 0.9, "{score}");
        let g = round_trip_gateway(q, "escribe", bt, Lang::Es);
        let pairs = [CandidatePair { q: q.into(), a: "def f(): pass".into() }];
        let strict = round_trip_filter(&pairs, Lang::Es, &BootstrapConfig::default(), &g, &profile()).unwrap();
        assert!(strict.data.is_empty());
        assert_eq!(strict.audit.len(), 1);
        let relaxed = round_trip_filter(&pairs, Lang::Es, &BootstrapConfig::relaxed(), &g, &profile()).unwrap();
        assert_eq!(relaxed.data.len(), 1);
        assert_eq!(relaxed.data[0].prompt, "escribe");
        assert_eq!(accepted_at(&strict.audit, 0.8).len(), 1);
    }

    #[test]
    fn failed_translation_is_logged_not_fatal() {
        let g = round_trip_gateway("a b c", "x", "a b c", Lang::Ja);
        let pairs = [
            CandidatePair { q: "a b c".into(), a: "1".into() },
            CandidatePair { q: "missing".into(), a: "2".into() },
        ];
        let out = round_trip_filter(&pairs, Lang::Ja, &BootstrapConfig::default(), &g, &profile()).unwrap();
        assert_eq!(out.audit.len(), 2);
        assert!(out.audit[0].accepted);
        assert!(out.audit[1].error.as_deref().unwrap().starts_with("translation"));
        assert!(round_trip_filter(&pairs, Lang::En, &BootstrapConfig::default(), &g, &profile()).is_err());
    }

    #[test]
    fn dataset_is_shuffled_deterministically_with_metadata() {
        let data: Vec<TrainingRecord> = ["a", "b", "c"]
            .iter()
            .zip([Lang::Es, Lang::Es, Lang::Zh])
            .map(|(p, lang)| TrainingRecord { prompt: p.to_string(), completion: "x".into(), lang })
            .collect();
        assert_eq!(shuffled(&data, 42), shuffled(&data, 42));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let meta = emit_dataset(&data, &path, 42, 0.9).unwrap();
        let first = fs::read(&path).unwrap();
        emit_dataset(&data, &path, 42, 0.9).unwrap();
        assert_eq!(first, fs::read(&path).unwrap());
        assert_eq!(meta.per_lang[&Lang::Es], 2);
        let v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(meta_path(&path)).unwrap()).unwrap();
        assert_eq!(v["temperature"], 0.8);
        assert_eq!(v["epochs"], 2);
        assert!(matches!(emit_dataset(&[], &path, 1, 0.9), Err(BootstrapError::EmptyDataset)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn words() -> impl Strategy<Value = Vec<String>> {
            prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f"]), 1..12)
                .prop_map(|v| v.into_iter().map(String::from).collect())
        }

        proptest! {
            #[test]
            fn self_similarity_is_one(w in words()) {
                prop_assert_eq!(bleu_tokens(&w, &w).score, 1.0);
            }

            #[test]
            fn score_is_bounded(c in words(), r in words()) {
                let s = bleu_tokens(&c, &r).score;
                prop_assert!((0.0..=1.0).contains(&s));
            }

            #[test]
            fn masking_never_increases(r in words(), order in Just((0..12).collect::<Vec<usize>>()).prop_shuffle()) {
                let mut cand = r.clone();
                let mut prev = bleu_tokens(&cand, &r).score;
                for &i in order.iter().filter(|&&i| i < r.len()) {
                    cand[i] = "<mask>".into();
                    let s = bleu_tokens(&cand, &r).score;
                    prop_assert!(s <= prev + 1e-12);
                    prev = s;
                }
            }
        }
    }
}
