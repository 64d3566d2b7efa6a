//! Zero-shot inference through projected embeddings.
//!
//! The prompt is word-tokenized, looked up in the encoder table and projected
//! into LLM space; the system prompt is embedded with the LLM's own table.
//! [`ToyDecoder`] is a small seeded transformer that consumes such sequences.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{self, AlignError, EmbeddingTable, SubwordMap};
use crate::codeexec::{Mode, ModelResponse};
use crate::projector::{Projector, ProjectorError};
use crate::Lang;

pub const EMBS_MAGIC: &[u8; 4] = b"EMBS";
pub const EMBS_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum XlingualError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("empty input sequence")]
    EmptyInput,
    #[error("zero vector has no cosine similarity")]
    ZeroVector,
    #[error("table has no usable rows")]
    EmptyTable,
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenId { id: usize, vocab: usize },
    #[error("bad sequence container: {0}")]
    Container(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Projector(#[from] ProjectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SystemToken,
    ProjectedWord,
}

impl Provenance {
    fn id(self) -> u8 {
        match self {
            Provenance::SystemToken => 0,
            Provenance::ProjectedWord => 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceCoverage {
    pub prompt_words: usize,
    pub dropped_words: Vec<String>,
    pub dropped_system_pieces: Vec<String>,
}

impl SequenceCoverage {
    pub fn dropped_rate(&self) -> f64 {
        if self.prompt_words == 0 {
            0.0
        } else {
            self.dropped_words.len() as f64 / self.prompt_words as f64
        }
    }
}

/// Input vectors plus where each one came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
    pub provenance: Vec<Provenance>,
    pub coverage: SequenceCoverage,
}

impl EmbeddingSequence {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// EMBS container: magic, version, length, dim, then per row a provenance byte and `dim` f32.
    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(EMBS_MAGIC)?;
        for v in [EMBS_VERSION, self.len() as u32, self.dim as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for (row, p) in self.vectors.iter().zip(&self.provenance) {
            w.write_all(&[p.id()])?;
            for &x in row {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, XlingualError> {
        let bad = |m: &str| XlingualError::Container(m.to_string());
        let mut head = [0u8; 16];
        r.read_exact(&mut head).map_err(|_| bad("unexpected EOF in header"))?;
        if &head[..4] != EMBS_MAGIC {
            return Err(bad("bad magic"));
        }
        let u = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().expect("4 bytes")) as usize;
        if u(4) != EMBS_VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let (len, dim) = (u(8), u(12));
        let mut vectors = Vec::with_capacity(len.min(1 << 16));
        let mut provenance = Vec::with_capacity(len.min(1 << 16));
        let mut buf = vec![0u8; 1 + 4 * dim];
        for _ in 0..len {
            r.read_exact(&mut buf).map_err(|_| bad("unexpected EOF in rows"))?;
            provenance.push(match buf[0] {
                0 => Provenance::SystemToken,
                1 => Provenance::ProjectedWord,
                other => return Err(bad(&format!("unknown provenance {other}"))),
            });
            vectors.push(
                buf[1..]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                    .collect(),
            );
        }
        Ok(Self { dim, vectors, provenance, coverage: SequenceCoverage::default() })
    }

    pub fn save(&self, path: &Path) -> Result<(), XlingualError> {
        let io = |source| XlingualError::Io { path: path.to_path_buf(), source };
        self.write_to(BufWriter::new(File::create(path).map_err(io)?)).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, XlingualError> {
        let f = File::open(path).map_err(|source| XlingualError::Io { path: path.to_path_buf(), source })?;
        Self::read_from(BufReader::new(f))
    }
}

/// Greedy longest-match tokenizer over an LLM table's vocabulary.
///
/// Words with a subword-map entry use it; otherwise the word is matched as
/// `▁word`, then as itself, then split greedily into the longest known
/// prefixes. Characters with no token are dropped and reported.
pub struct VocabTokenizer<'a> {
    table: &'a EmbeddingTable,
    subwords: Option<&'a SubwordMap>,
    max_chars: usize,
}

impl<'a> VocabTokenizer<'a> {
    pub fn new(table: &'a EmbeddingTable, subwords: Option<&'a SubwordMap>) -> Self {
        let max_chars = table.tokens().iter().map(|t| t.chars().count()).max().unwrap_or(1);
        Self { table, subwords, max_chars }
    }

    /// Token strings for `text` plus the pieces that had no token.
    pub fn encode(&self, text: &str) -> Result<(Vec<String>, Vec<String>), AlignError> {
        let mut out = Vec::new();
        let mut dropped = Vec::new();
        for w in align::word_tokenize(text, Lang::En)? {
            let word = w.surface;
            if let Some(pieces) = self.subwords.and_then(|m| m.get(&word)) {
                if pieces.iter().all(|p| self.table.get(p).is_some()) {
                    out.extend(pieces.iter().cloned());
                    continue;
                }
            }
            let marked = format!("\u{2581}{word}");
            if self.table.get(&marked).is_some() {
                out.push(marked);
                continue;
            }
            let chars: Vec<(usize, char)> = word.char_indices().collect();
            let mut i = 0;
            while i < chars.len() {
                let end = |k: usize| chars.get(k).map_or(word.len(), |&(b, _)| b);
                let longest = self.max_chars.min(chars.len() - i);
                let hit = (1..=longest)
                    .rev()
                    .map(|n| (n, &word[chars[i].0..end(i + n)]))
                    .find(|(_, s)| self.table.get(s).is_some());
                match hit {
                    Some((n, s)) => {
                        out.push(s.to_string());
                        i += n;
                    }
                    None => {
                        dropped.push(chars[i].1.to_string());
                        i += 1;
                    }
                }
            }
        }
        Ok((out, dropped))
    }
}

/// System prompt embedded natively, then each covered prompt word projected.
pub fn build_input_embeddings(
    system_prompt: &str,
    prompt: &str,
    lang: Lang,
    laser: &EmbeddingTable,
    projector: &Projector,
    llm: &EmbeddingTable,
    subwords: Option<&SubwordMap>,
) -> Result<EmbeddingSequence, XlingualError> {
    if projector.d_in != laser.dim() || projector.d_out != llm.dim() {
        return Err(XlingualError::Dim(format!(
            "projector {}→{} does not match tables {}→{}",
            projector.d_in,
            projector.d_out,
            laser.dim(),
            llm.dim()
        )));
    }
    let mut seq = EmbeddingSequence {
        dim: llm.dim(),
        vectors: Vec::new(),
        provenance: Vec::new(),
        coverage: SequenceCoverage::default(),
    };
    let (pieces, dropped) = VocabTokenizer::new(llm, subwords).encode(system_prompt)?;
    seq.coverage.dropped_system_pieces = dropped;
    for p in pieces {
        let v = llm.get(&p).expect("tokenizer only emits known tokens");
        seq.vectors.push(v.iter().map(|&x| x as f64).collect());
        seq.provenance.push(Provenance::SystemToken);
    }
    for w in align::word_tokenize(prompt, lang)? {
        seq.coverage.prompt_words += 1;
        match laser.get(&w.surface) {
            Some(enc) => {
                let x: Vec<f64> = enc.iter().map(|&v| v as f64).collect();
                seq.vectors.push(projector.project(&x)?);
                seq.provenance.push(Provenance::ProjectedWord);
            }
            None => seq.coverage.dropped_words.push(w.surface),
        }
    }
    if seq.is_empty() {
        return Err(XlingualError::EmptyInput);
    }
    Ok(seq)
}

/// Cosine nearest neighbour over a table; ties go to the smaller token.
pub struct NearestTokenDecoder<'a> {
    table: &'a EmbeddingTable,
    norms: Vec<f64>,
}

impl<'a> NearestTokenDecoder<'a> {
    pub fn new(table: &'a EmbeddingTable) -> Self {
        let norms = (0..table.len())
            .map(|i| table.row(i).iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt())
            .collect();
        Self { table, norms }
    }

    pub fn nearest(&self, v: &[f64]) -> Result<&'a str, XlingualError> {
        if v.len() != self.table.dim() {
            return Err(XlingualError::Dim(format!("vector dim {} vs table dim {}", v.len(), self.table.dim())));
        }
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vn == 0.0 {
            return Err(XlingualError::ZeroVector);
        }
        let mut best: Option<(f64, &'a str)> = None;
        for (i, token) in self.table.tokens().iter().enumerate() {
            if self.norms[i] == 0.0 {
                continue;
            }
            let dot: f64 = self.table.row(i).iter().zip(v).map(|(&a, b)| a as f64 * b).sum();
            let cos = dot / (self.norms[i] * vn);
            best = match best {
                Some((b, t)) if b > cos || (b == cos && t <= token.as_str()) => Some((b, t)),
                _ => Some((cos, token.as_str())),
            };
        }
        best.map(|(_, t)| t).ok_or(XlingualError::EmptyTable)
    }
}

pub fn nearest_token<'a>(v: &[f64], table: &'a EmbeddingTable) -> Result<&'a str, XlingualError> {
    NearestTokenDecoder::new(table).nearest(v)
}

/// A model that consumes embedding sequences.
pub trait EmbeddingLm {
    fn vocab_size(&self) -> usize;
    fn dim(&self) -> usize;
    /// Input embedding of each id.
    fn embed_ids(&self, ids: &[usize]) -> Result<Vec<Vec<f64>>, XlingualError>;
    /// Next-token logits at every position.
    fn logits(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, XlingualError>;
    fn detokenize(&self, ids: &[usize]) -> String;
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecoderInput {
    Ids(Vec<usize>),
    Embeddings(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<usize>,
    /// Last-position logits at each decoding step.
    pub step_logits: Vec<Vec<f64>>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding. Ids are embedded first and then share the embedding path.
pub fn generate(model: &dyn EmbeddingLm, input: &DecoderInput, max_new: usize) -> Result<Generation, XlingualError> {
    let mut seq = match input {
        DecoderInput::Ids(ids) => model.embed_ids(ids)?,
        DecoderInput::Embeddings(v) => v.clone(),
    };
    if seq.is_empty() {
        return Err(XlingualError::EmptyInput);
    }
    let mut out = Generation { tokens: Vec::new(), step_logits: Vec::new() };
    for _ in 0..max_new {
        let logits = model.logits(&seq)?;
        let last = logits.last().expect("non-empty sequence").clone();
        let next = argmax(&last);
        out.tokens.push(next);
        out.step_logits.push(last);
        seq.extend(model.embed_ids(&[next])?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub vocab: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { vocab: 256, dim: 64, layers: 2, heads: 4, seed: 0 }
    }
}

#[derive(Debug, Clone)]
struct Linear {
    w: Vec<f64>,
    b: Vec<f64>,
    d_in: usize,
}

impl Linear {
    fn new(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = 1.0 / (d_in as f64).sqrt();
        Self {
            w: (0..d_in * d_out).map(|_| rng.gen_range(-a..a)).collect(),
            b: (0..d_out).map(|_| rng.gen_range(-0.02..0.02)).collect(),
            d_in,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w
            .chunks_exact(self.d_in)
            .zip(&self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Norm {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

impl Norm {
    fn new(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            gain: (0..d).map(|_| 1.0 + rng.gen_range(-0.1..0.1)).collect(),
            bias: (0..d).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        x.iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(v, (g, b))| (v - mean) * inv * g + b)
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1: Norm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ln2: Norm,
    up: Linear,
    down: Linear,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

/// Seeded pre-norm causal transformer with tied input/output embeddings.
#[derive(Debug, Clone)]
pub struct ToyDecoder {
    cfg: ToyConfig,
    embedding: Vec<f64>,
    blocks: Vec<Block>,
    final_norm: Norm,
}

impl ToyDecoder {
    pub fn new(cfg: ToyConfig) -> Result<Self, XlingualError> {
        if cfg.vocab == 0 || cfg.dim == 0 || cfg.heads == 0 || cfg.dim % cfg.heads != 0 {
            return Err(XlingualError::Dim(format!(
                "dim {} must be a positive multiple of heads {}",
                cfg.dim, cfg.heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.dim;
        let embedding = (0..cfg.vocab * d).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let blocks = (0..cfg.layers)
            .map(|_| Block {
                ln1: Norm::new(d, &mut rng),
                q: Linear::new(d, d, &mut rng),
                k: Linear::new(d, d, &mut rng),
                v: Linear::new(d, d, &mut rng),
                o: Linear::new(d, d, &mut rng),
                ln2: Norm::new(d, &mut rng),
                up: Linear::new(d, 4 * d, &mut rng),
                down: Linear::new(4 * d, d, &mut rng),
            })
            .collect();
        let final_norm = Norm::new(d, &mut rng);
        Ok(Self { cfg, embedding, blocks, final_norm })
    }

    pub fn config(&self) -> ToyConfig {
        self.cfg
    }

    fn row(&self, id: usize) -> &[f64] {
        &self.embedding[id * self.cfg.dim..(id + 1) * self.cfg.dim]
    }

    /// Token string for id `i`: printable ASCII as itself, other bytes as `<0xNN>`.
    pub fn token_string(id: usize) -> String {
        match u8::try_from(id) {
            Ok(b) if b.is_ascii_graphic() || b == b' ' => (b as char).to_string(),
            Ok(b) => format!("<0x{b:02X}>"),
            Err(_) => format!("<{id}>"),
        }
    }

    /// The input embedding matrix as a table.
    pub fn embedding_table(&self) -> EmbeddingTable {
        EmbeddingTable::new(
            format!("toy-{}", self.cfg.seed),
            self.cfg.dim,
            false,
            (0..self.cfg.vocab).map(|i| (Self::token_string(i), self.row(i).iter().map(|&x| x as f32).collect())),
        )
        .expect("toy embedding rows are finite and unique")
    }

    fn positional(pos: usize, d: usize) -> Vec<f64> {
        (0..d)
            .map(|i| {
                let angle = pos as f64 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
                if i % 2 == 0 {
                    angle.sin()
                } else {
                    angle.cos()
                }
            })
            .collect()
    }

    fn attention(&self, block: &Block, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let normed: Vec<Vec<f64>> = xs.iter().map(|x| block.ln1.apply(x)).collect();
        let q: Vec<Vec<f64>> = normed.iter().map(|x| block.q.apply(x)).collect();
        let k: Vec<Vec<f64>> = normed.iter().map(|x| block.k.apply(x)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|x| block.v.apply(x)).collect();
        let hd = self.cfg.dim / self.cfg.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        (0..xs.len())
            .map(|i| {
                let mut ctx = vec![0.0; self.cfg.dim];
                for h in 0..self.cfg.heads {
                    let r = h * hd..(h + 1) * hd;
                    // Position i sees only positions 0..=i.
                    let scores: Vec<f64> = (0..=i)
                        .map(|j| q[i][r.clone()].iter().zip(&k[j][r.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale)
                        .collect();
                    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for (j, w) in e.iter().enumerate() {
                        for (c, vv) in ctx[r.clone()].iter_mut().zip(&v[j][r.clone()]) {
                            *c += w / z * vv;
                        }
                    }
                }
                block.o.apply(&ctx)
            })
            .collect()
    }
}

impl EmbeddingLm for ToyDecoder {
    fn vocab_size(&self) -> usize {
        self.cfg.vocab
    }

    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn embed_ids(&self, ids: &[usize]) -> Result<Vec<Vec<f64>>, XlingualError> {
        ids.iter()
            .map(|&id| {
                if id >= self.cfg.vocab {
                    Err(XlingualError::TokenId { id, vocab: self.cfg.vocab })
                } else {
                    Ok(self.row(id).to_vec())
                }
            })
            .collect()
    }

    fn logits(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, XlingualError> {
        if inputs.is_empty() {
            return Err(XlingualError::EmptyInput);
        }
        let d = self.cfg.dim;
        if let Some(bad) = inputs.iter().find(|v| v.len() != d) {
            return Err(XlingualError::Dim(format!("input vector of dim {} for model dim {d}", bad.len())));
        }
        let mut xs: Vec<Vec<f64>> = inputs
            .iter()
            .enumerate()
            .map(|(p, x)| x.iter().zip(Self::positional(p, d)).map(|(a, b)| a + b).collect())
            .collect();
        for block in &self.blocks {
            let att = self.attention(block, &xs);
            for (x, a) in xs.iter_mut().zip(att) {
                x.iter_mut().zip(a).for_each(|(x, a)| *x += a);
            }
            for x in xs.iter_mut() {
                let hidden: Vec<f64> = block.up.apply(&block.ln2.apply(x)).into_iter().map(gelu).collect();
                x.iter_mut().zip(block.down.apply(&hidden)).for_each(|(x, m)| *x += m);
            }
        }
        Ok(xs
            .iter()
            .map(|x| {
                let h = self.final_norm.apply(x);
                self.embedding
                    .chunks_exact(d)
                    .map(|row| row.iter().zip(&h).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect())
    }

    fn detokenize(&self, ids: &[usize]) -> String {
        let bytes: Vec<u8> = ids.iter().filter_map(|&i| u8::try_from(i).ok()).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

/// Everything the projected-input path needs.
pub struct LpStack<'a> {
    pub laser: &'a EmbeddingTable,
    pub projector: &'a Projector,
    pub llm_table: &'a EmbeddingTable,
    pub subwords: Option<&'a SubwordMap>,
    pub model: &'a dyn EmbeddingLm,
    pub system_prompt: String,
    pub max_new_tokens: usize,
}

/// Run one prompt through the stack and wrap the output as an `lp` response.
pub fn zero_shot_infer(
    task_id: &str,
    prompt: &str,
    lang: Lang,
    stack: &LpStack<'_>,
) -> Result<(ModelResponse, SequenceCoverage), XlingualError> {
    if stack.model.dim() != stack.llm_table.dim() {
        return Err(XlingualError::Dim(format!(
            "model dim {} vs LLM table dim {}",
            stack.model.dim(),
            stack.llm_table.dim()
        )));
    }
    let seq = build_input_embeddings(
        &stack.system_prompt,
        prompt,
        lang,
        stack.laser,
        stack.projector,
        stack.llm_table,
        stack.subwords,
    )?;
    let gen = generate(stack.model, &DecoderInput::Embeddings(seq.vectors), stack.max_new_tokens)?;
    Ok((
        ModelResponse {
            task_id: task_id.to_string(),
            lang,
            mode: Mode::Lp,
            raw_text: stack.model.detokenize(&gen.tokens),
        },
        seq.coverage,
    ))
}
