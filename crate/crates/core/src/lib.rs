//! Toolkit for evaluating LLM code generation across natural languages.
//!
//! The crate covers the whole evaluation loop and the cross-lingual
//! projection approach:
//!
//! - [`corpus`]: multilingual task corpus and translation-quality statistics.
//! - [`codeexec`]: code extraction, assertion rewriting and sandboxed execution.
//! - [`metrics`]: LER / SER / TotalER / ATPR / CCR and English-gap reports.
//! - [`llmgateway`]: chat-completion client with record/replay transcripts.
//! - [`bootstrap`]: round-trip translation filtering with sentence BLEU.
//! - [`align`]: word tokenization, embedding tables and training pairs.
//! - [`projector`]: two-layer affine projector trained by MSE, plus an OLS oracle.
//! - [`xlingual`]: input-embedding assembly, nearest-token decoding and a toy decoder.

pub mod align;
pub mod bootstrap;
pub mod codeexec;
pub mod corpus;
pub mod jsonl;
pub mod lang;
pub mod llmgateway;
pub mod metrics;
pub mod projector;
pub mod xlingual;

pub use lang::Lang;
