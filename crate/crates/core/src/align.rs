//! Word-level training pairs for the projector.
//!
//! Encoder vectors come from exact table lookup. LLM vectors are the
//! element-wise max over the word's subword vectors. Both tables use the
//! EMBT binary format.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::jsonl::{self, JsonlError};
use crate::Lang;

pub const EMBT_MAGIC: &[u8; 4] = b"EMBT";
pub const EMBT_VERSION: u32 = 1;

/// Word-boundary markers stripped before checking that subwords rebuild a word.
pub const BOUNDARY_MARKERS: &[&str] = &["\u{2581}", "\u{120}", "##"];

#[derive(Debug, thiserror::Error)]
pub enum AlignError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("unexpected EOF while reading {0}")]
    UnexpectedEof(&'static str),
    #[error("bad magic {0:?}, expected \"EMBT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported EMBT version {0}")]
    UnsupportedVersion(u32),
    #[error("token {index} is not valid UTF-8")]
    InvalidUtf8 { index: usize },
    #[error("token {0:?} has a non-finite component")]
    NonFinite(String),
    #[error("token {token:?} has {got} components, table dim is {dim}")]
    DimMismatch { token: String, got: usize, dim: usize },
    #[error("duplicate token {0:?}")]
    DuplicateToken(String),
    #[error("table dim must be positive")]
    ZeroDim,
    #[error("word {0:?} has no subword mapping")]
    UnmappedWord(String),
    #[error("subword {subword:?} of word {word:?} is missing from the LLM table")]
    MissingSubword { word: String, subword: String },
    #[error("subwords {subwords:?} do not rebuild word {word:?}")]
    Reconstruction { word: String, subwords: Vec<String> },
    #[error("no segmenter available for {0}")]
    NoSegmenter(Lang),
    #[error("segmenter: {0}")]
    Segmenter(String),
    #[error("no training pairs produced ({0} words seen)")]
    NoPairs(usize),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> AlignError + '_ {
    move |source| AlignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Token → vector table with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub name: String,
    dim: usize,
    normalized: bool,
    tokens: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        normalized: bool,
        entries: impl IntoIterator<Item = (String, Vec<f32>)>,
    ) -> Result<Self, AlignError> {
        if dim == 0 {
            return Err(AlignError::ZeroDim);
        }
        let mut t = Self {
            name: name.into(),
            dim,
            normalized,
            tokens: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        };
        for (token, v) in entries {
            if v.len() != dim {
                return Err(AlignError::DimMismatch { token, got: v.len(), dim });
            }
            t.push_row(token, &v)?;
        }
        Ok(t)
    }

    fn push_row(&mut self, token: String, v: &[f32]) -> Result<(), AlignError> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(AlignError::NonFinite(token));
        }
        if self.index.contains_key(&token) {
            return Err(AlignError::DuplicateToken(token));
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.data.extend_from_slice(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.index.get(token).map(|&i| self.row(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), self.row(i)))
    }

    pub fn read_from(mut r: impl Read, name: impl Into<String>) -> Result<Self, AlignError> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != EMBT_MAGIC {
            return Err(AlignError::BadMagic(magic));
        }
        let version = read_u32(&mut r, "version")?;
        if version != EMBT_VERSION {
            return Err(AlignError::UnsupportedVersion(version));
        }
        let vocab = read_u32(&mut r, "vocab size")? as usize;
        let dim = read_u32(&mut r, "dim")? as usize;
        let mut flag = [0u8; 1];
        read_exact(&mut r, &mut flag, "normalized flag")?;
        if dim == 0 {
            return Err(AlignError::ZeroDim);
        }
        let mut tokens = Vec::with_capacity(vocab.min(1 << 20));
        for index in 0..vocab {
            let len = read_u32(&mut r, "token length")? as usize;
            let mut buf = vec![0u8; len];
            read_exact(&mut r, &mut buf, "token bytes")?;
            tokens.push(String::from_utf8(buf).map_err(|_| AlignError::InvalidUtf8 { index })?);
        }
        let mut t = Self::new(name, dim, flag[0] != 0, std::iter::empty())?;
        let mut row = vec![0f32; dim];
        let mut bytes = vec![0u8; dim * 4];
        for token in tokens {
            read_exact(&mut r, &mut bytes, "vector data")?;
            for (x, b) in row.iter_mut().zip(bytes.chunks_exact(4)) {
                *x = f32::from_le_bytes(b.try_into().expect("4-byte chunk"));
            }
            t.push_row(token, &row)?;
        }
        Ok(t)
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(EMBT_MAGIC)?;
        w.write_all(&EMBT_VERSION.to_le_bytes())?;
        w.write_all(&(self.tokens.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&[self.normalized as u8])?;
        for t in &self.tokens {
            w.write_all(&(t.len() as u32).to_le_bytes())?;
            w.write_all(t.as_bytes())?;
        }
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<(), AlignError> {
        let f = File::create(path).map_err(io_err(path))?;
        self.write_to(BufWriter::new(f)).map_err(io_err(path))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<(), AlignError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => AlignError::UnexpectedEof(what),
        _ => AlignError::Io {
            path: PathBuf::new(),
            source: e,
        },
    })
}

fn read_u32(r: &mut impl Read, what: &'static str) -> Result<u32, AlignError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Read an EMBT file; the table is named after the file stem.
pub fn load_table(path: &Path) -> Result<EmbeddingTable, AlignError> {
    let f = File::open(path).map_err(io_err(path))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    EmbeddingTable::read_from(BufReader::new(f), name).map_err(|e| match e {
        AlignError::Io { source, .. } => AlignError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordToken {
    pub surface: String,
    pub lang: Lang,
    /// Byte offsets into the source text.
    pub start: usize,
    pub end: usize,
}

/// Splits unsegmented text into word spans.
pub trait Segmenter: Send + Sync {
    /// Non-overlapping, ordered byte spans of the words in `text`.
    fn segment(&self, text: &str) -> Result<Vec<(usize, usize)>, AlignError>;
}

/// Forward longest match against a word list; unknown characters become
/// single-character words and runs of letters or digits outside the lexicon
/// stay together.
#[derive(Debug, Clone)]
pub struct LexiconSegmenter {
    words: HashSet<String>,
    max_chars: usize,
}

impl LexiconSegmenter {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: HashSet<String> = words
            .into_iter()
            .map(Into::into)
            .filter(|w| !w.trim().is_empty())
            .collect();
        let max_chars = words.iter().map(|w| w.chars().count()).max().unwrap_or(1);
        Self { words, max_chars }
    }

    /// One word per line; blank lines and `#` comments ignored.
    pub fn from_lines(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn builtin(lang: Lang) -> Option<&'static LexiconSegmenter> {
        static ZH: OnceLock<LexiconSegmenter> = OnceLock::new();
        static JA: OnceLock<LexiconSegmenter> = OnceLock::new();
        match lang {
            Lang::Zh => Some(ZH.get_or_init(|| Self::from_lines(include_str!("../data/lexicon_zh.txt")))),
            Lang::Ja => Some(JA.get_or_init(|| Self::from_lines(include_str!("../data/lexicon_ja.txt")))),
            _ => None,
        }
    }
}

fn is_latin_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl Segmenter for LexiconSegmenter {
    fn segment(&self, text: &str) -> Result<Vec<(usize, usize)>, AlignError> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let end_of = |k: usize| chars.get(k).map_or(text.len(), |&(b, _)| b);
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i].1;
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if is_latin_word_char(c) {
                let mut j = i + 1;
                while j < chars.len() && is_latin_word_char(chars[j].1) {
                    j += 1;
                }
                out.push((chars[i].0, end_of(j)));
                i = j;
                continue;
            }
            let mut take = 1;
            let longest = self.max_chars.min(chars.len() - i);
            for n in (2..=longest).rev() {
                if self.words.contains(&text[chars[i].0..end_of(i + n)]) {
                    take = n;
                    break;
                }
            }
            out.push((chars[i].0, end_of(i + take)));
            i += take;
        }
        Ok(out)
    }
}

/// External segmenter: text on stdin, whitespace-separated words on stdout.
#[derive(Debug, Clone)]
pub struct CommandSegmenter {
    pub program: String,
    pub args: Vec<String>,
}

impl Segmenter for CommandSegmenter {
    fn segment(&self, text: &str) -> Result<Vec<(usize, usize)>, AlignError> {
        let seg_err = |m: String| AlignError::Segmenter(format!("{}: {m}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| seg_err(e.to_string()))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let input = text.to_string();
        let writer = std::thread::spawn(move || stdin.write_all(input.as_bytes()));
        let out = child.wait_with_output().map_err(|e| seg_err(e.to_string()))?;
        writer
            .join()
            .expect("writer thread")
            .map_err(|e| seg_err(e.to_string()))?;
        if !out.status.success() {
            return Err(seg_err(format!(
                "exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stdout = String::from_utf8(out.stdout).map_err(|_| seg_err("non-UTF-8 output".into()))?;
        let mut spans = Vec::new();
        let mut pos = 0;
        for word in stdout.split_whitespace() {
            let at = text[pos..]
                .find(word)
                .ok_or_else(|| seg_err(format!("word {word:?} not found in input")))?;
            spans.push((pos + at, pos + at + word.len()));
            pos += at + word.len();
        }
        Ok(spans)
    }
}

/// Language-aware word tokenizer.
pub struct Tokenizer {
    segmenters: HashMap<Lang, Box<dyn Segmenter>>,
    /// Use the built-in lexicons when no segmenter is registered.
    pub lexicon_fallback: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            segmenters: HashMap::new(),
            lexicon_fallback: true,
        }
    }
}

impl Tokenizer {
    pub fn register(&mut self, lang: Lang, segmenter: impl Segmenter + 'static) {
        self.segmenters.insert(lang, Box::new(segmenter));
    }

    pub fn tokenize(&self, text: &str, lang: Lang) -> Result<Vec<WordToken>, AlignError> {
        let spans = if lang.is_unsegmented() {
            match (self.segmenters.get(&lang), LexiconSegmenter::builtin(lang)) {
                (Some(s), _) => s.segment(text)?,
                (None, Some(lex)) if self.lexicon_fallback => lex.segment(text)?,
                _ => return Err(AlignError::NoSegmenter(lang)),
            }
        } else {
            text.split_word_bound_indices()
                .filter(|(_, w)| !w.trim().is_empty())
                .map(|(i, w)| (i, i + w.len()))
                .collect()
        };
        Ok(spans
            .into_iter()
            .filter(|&(s, e)| e > s)
            .map(|(start, end)| WordToken {
                surface: text[start..end].to_string(),
                lang,
                start,
                end,
            })
            .collect())
    }
}

/// Tokenize with the default tokenizer (built-in lexicons for zh/ja).
pub fn word_tokenize(text: &str, lang: Lang) -> Result<Vec<WordToken>, AlignError> {
    static DEFAULT: OnceLock<Tokenizer> = OnceLock::new();
    DEFAULT.get_or_init(Tokenizer::default).tokenize(text, lang)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordEntry {
    pub word: String,
    pub subwords: Vec<String>,
}

/// Word → LLM subword tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SubwordMap {
    map: HashMap<String, Vec<String>>,
}

fn strip_markers(s: &str) -> &str {
    BOUNDARY_MARKERS
        .iter()
        .find_map(|m| s.strip_prefix(m))
        .unwrap_or(s)
}

impl SubwordMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert after checking that the subwords rebuild the word.
    pub fn insert(&mut self, word: String, subwords: Vec<String>) -> Result<(), AlignError> {
        let rebuilt: String = subwords.iter().map(|s| strip_markers(s)).collect();
        if subwords.is_empty() || rebuilt != word {
            return Err(AlignError::Reconstruction { word, subwords });
        }
        self.map.insert(word, subwords);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.map.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, AlignError> {
        let mut m = Self::new();
        for rec in jsonl::read::<SubwordEntry>(path)? {
            m.insert(rec.value.word, rec.value.subwords)?;
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), AlignError> {
        let mut entries: Vec<SubwordEntry> = self
            .map
            .iter()
            .map(|(w, s)| SubwordEntry {
                word: w.clone(),
                subwords: s.clone(),
            })
            .collect();
        entries.sort_by(|a, b| a.word.cmp(&b.word));
        jsonl::write(path, &entries).map_err(io_err(path))
    }
}

/// Element-wise maximum over equal-length vectors.
pub fn max_pool<'a>(vectors: impl IntoIterator<Item = &'a [f32]>) -> Option<Vec<f64>> {
    let mut it = vectors.into_iter();
    let mut acc: Vec<f64> = it.next()?.iter().map(|&x| x as f64).collect();
    for v in it {
        for (a, &x) in acc.iter_mut().zip(v) {
            *a = a.max(x as f64);
        }
    }
    Some(acc)
}

/// Max-pool of the word's subword vectors in the LLM table.
pub fn pool_llm_embedding(
    word: &str,
    subwords: &SubwordMap,
    llm: &EmbeddingTable,
) -> Result<Vec<f64>, AlignError> {
    let pieces = subwords
        .get(word)
        .ok_or_else(|| AlignError::UnmappedWord(word.to_string()))?;
    let mut rows = Vec::with_capacity(pieces.len());
    for p in pieces {
        rows.push(llm.get(p).ok_or_else(|| AlignError::MissingSubword {
            word: word.to_string(),
            subword: p.clone(),
        })?);
    }
    Ok(max_pool(rows).expect("subword lists are non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub word: String,
    pub h_laser: Vec<f64>,
    pub h_llm: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub words_seen: usize,
    pub distinct: usize,
    pub pairs: usize,
    pub missing_encoder: Vec<String>,
    pub missing_llm: Vec<String>,
}

impl Coverage {
    /// Fraction of distinct words that produced a pair.
    pub fn ratio(&self) -> f64 {
        if self.distinct == 0 {
            0.0
        } else {
            self.pairs as f64 / self.distinct as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<TrainingPair>,
    pub coverage: Coverage,
}

/// Word-tokenize English texts and pair each distinct word's encoder vector
/// with its pooled LLM vector. First occurrence wins; uncovered words are
/// dropped and listed.
pub fn build_training_pairs(
    texts: &[String],
    laser: &EmbeddingTable,
    llm: &EmbeddingTable,
    subwords: &SubwordMap,
) -> Result<PairSet, AlignError> {
    let mut cov = Coverage::default();
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for text in texts {
        for tok in word_tokenize(text, Lang::En)? {
            cov.words_seen += 1;
            if !seen.insert(tok.surface.clone()) {
                continue;
            }
            let Some(enc) = laser.get(&tok.surface) else {
                cov.missing_encoder.push(tok.surface);
                continue;
            };
            let target = match pool_llm_embedding(&tok.surface, subwords, llm) {
                Ok(v) => v,
                Err(AlignError::UnmappedWord(_) | AlignError::MissingSubword { .. }) => {
                    cov.missing_llm.push(tok.surface);
                    continue;
                }
                Err(e) => return Err(e),
            };
            pairs.push(TrainingPair {
                word: tok.surface,
                h_laser: enc.iter().map(|&x| x as f64).collect(),
                h_llm: target,
            });
        }
    }
    cov.distinct = seen.len();
    cov.pairs = pairs.len();
    if pairs.is_empty() {
        return Err(AlignError::NoPairs(cov.words_seen));
    }
    Ok(PairSet {
        pairs,
        coverage: cov,
    })
}

pub fn write_pairs(path: &Path, pairs: &[TrainingPair]) -> Result<(), AlignError> {
    jsonl::write(path, pairs).map_err(io_err(path))
}

pub fn read_pairs(path: &Path) -> Result<Vec<TrainingPair>, AlignError> {
    Ok(jsonl::read::<TrainingPair>(path)?
        .into_iter()
        .map(|n| n.value)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(dim: usize, rows: &[(&str, &[f32])]) -> EmbeddingTable {
        EmbeddingTable::new(
            "t",
            dim,
            false,
            rows.iter().map(|(t, v)| (t.to_string(), v.to_vec())),
        )
        .unwrap()
    }

    fn surfaces(text: &str, lang: Lang) -> Vec<String> {
        word_tokenize(text, lang)
            .unwrap()
            .into_iter()
            .map(|t| t.surface)
            .collect()
    }

    #[test]
    fn embt_round_trip() {
        let t = table(8, &[
            ("a", &[1.0; 8]),
            ("bé", &[-0.5; 8]),
            ("▁c", &[0.25; 8]),
            ("", &[0.0; 8]),
        ]);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"EMBT");
        assert_eq!(buf.len(), 4 + 4 * 3 + 1 + (4 * 4 + 1 + 3 + 4) + 4 * 8 * 4);
        let back = EmbeddingTable::read_from(&buf[..], "t").unwrap();
        assert_eq!(back, t);
        assert_eq!(back.get("bé").unwrap()[3], -0.5);
    }

    #[test]
    fn truncated_file_reports_eof() {
        let t = table(2, &[("x", &[1.0, 2.0])]);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        buf.pop();
        let err = EmbeddingTable::read_from(&buf[..], "t").unwrap_err();
        assert!(err.to_string().contains("unexpected EOF"), "{err}");
    }

    #[test]
    fn bad_magic_and_nan_are_rejected() {
        assert!(matches!(
            EmbeddingTable::read_from(&b"EMBX\x01\0\0\0"[..], "t"),
            Err(AlignError::BadMagic(_))
        ));
        let err = EmbeddingTable::new("t", 2, false, [("w".to_string(), vec![f32::NAN, 0.0])]).unwrap_err();
        assert!(err.to_string().contains("\"w\""));
    }

    #[test]
    fn english_split_detaches_punctuation() {
        assert_eq!(surfaces("Write a function.", Lang::En), ["Write", "a", "function", "."]);
        assert!(surfaces("", Lang::En).is_empty());
        assert_eq!(surfaces("¿Qué es?", Lang::Es), ["¿", "Qué", "es", "?"]);
    }

    #[test]
    fn chinese_longest_match() {
        assert_eq!(surfaces("编写一个函数", Lang::Zh), ["编写", "一个", "函数"]);
        assert_eq!(surfaces("找到最大值 max_val。", Lang::Zh), ["找到", "最大值", "max_val", "。"]);
    }

    #[test]
    fn japanese_longest_match() {
        assert_eq!(surfaces("関数を書いてください", Lang::Ja), ["関数", "を", "書い", "て", "ください"]);
    }

    #[test]
    fn fallback_can_be_disabled() {
        let t = Tokenizer { lexicon_fallback: false, ..Default::default() };
        assert!(matches!(t.tokenize("函数", Lang::Zh), Err(AlignError::NoSegmenter(Lang::Zh))));
        assert!(t.tokenize("hi", Lang::En).is_ok());
    }

    #[test]
    fn command_segmenter_maps_words_to_spans() {
        let mut t = Tokenizer { lexicon_fallback: false, ..Default::default() };
        t.register(Lang::Zh, CommandSegmenter {
            program: "python3".into(),
            args: vec!["-c".into(), "import sys; print(' '.join(sys.stdin.read()))".into()],
        });
        let toks = t.tokenize("函数", Lang::Zh).unwrap();
        assert_eq!(toks.len(), 2);
        assert_eq!((toks[1].start, toks[1].end), (3, 6));
    }

    #[test]
    fn spans_are_ordered_and_rebuild_text() {
        let text = "Return  the   sum, please!";
        let toks = word_tokenize(text, Lang::En).unwrap();
        for w in toks.windows(2) {
            assert!(w[0].end <= w[1].start);
        }
        for t in &toks {
            assert_eq!(&text[t.start..t.end], t.surface);
        }
    }

    #[test]
    fn pooling_is_elementwise_max() {
        let llm = table(2, &[("▁ad", &[1.0, 5.0]), ("d", &[3.0, 2.0])]);
        let mut m = SubwordMap::new();
        m.insert("add".into(), vec!["▁ad".into(), "d".into()]).unwrap();
        m.insert("ad".into(), vec!["▁ad".into()]).unwrap();
        assert_eq!(pool_llm_embedding("add", &m, &llm).unwrap(), [3.0, 5.0]);
        assert_eq!(pool_llm_embedding("ad", &m, &llm).unwrap(), [1.0, 5.0]);
        let mut rev = SubwordMap::new();
        rev.map.insert("add".into(), vec!["d".into(), "▁ad".into(), "d".into()]);
        assert_eq!(pool_llm_embedding("add", &rev, &llm).unwrap(), [3.0, 5.0]);
        assert!(m.insert("add".into(), vec!["a".into()]).is_err());
        let mut missing = SubwordMap::new();
        missing.insert("xy".into(), vec!["x".into(), "y".into()]).unwrap();
        assert!(pool_llm_embedding("xy", &missing, &llm).unwrap_err().to_string().contains("\"x\""));
    }

    #[test]
    fn pairs_dedup_and_count_coverage() {
        let laser = table(2, &[("add", &[1.0, 0.0]), ("two", &[0.0, 1.0]), ("numbers", &[1.0, 1.0])]);
        let llm = table(3, &[("add", &[1.0, 2.0, 3.0]), ("two", &[0.0, 0.0, 1.0])]);
        let mut m = SubwordMap::new();
        m.insert("add".into(), vec!["add".into()]).unwrap();
        m.insert("two".into(), vec!["two".into()]).unwrap();
        let texts = vec!["add two numbers".to_string(), "add it".to_string()];
        let set = build_training_pairs(&texts, &laser, &llm, &m).unwrap();
        let words: Vec<_> = set.pairs.iter().map(|p| p.word.as_str()).collect();
        assert_eq!(words, ["add", "two"]);
        assert_eq!(set.coverage.missing_llm, ["numbers"]);
        assert_eq!(set.coverage.missing_encoder, ["it"]);
        assert_eq!(set.coverage.words_seen, 5);
        assert_eq!(set.coverage.distinct, 4);
        assert!(build_training_pairs(&["zzz".into()], &laser, &llm, &m).is_err());
    }

    #[test]
    fn subword_map_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sw.jsonl");
        std::fs::write(&p, "{\"word\":\"adding\",\"subwords\":[\"\u{2581}add\",\"ing\"]}\n").unwrap();
        let m = SubwordMap::load(&p).unwrap();
        assert_eq!(m.get("adding").unwrap().len(), 2);
        let q = dir.path().join("out.jsonl");
        m.save(&q).unwrap();
        assert_eq!(SubwordMap::load(&q).unwrap(), m);
    }
}
