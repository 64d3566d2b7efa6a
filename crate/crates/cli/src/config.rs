//! Experiment configuration read from a TOML file, then overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use polyglot_core::bootstrap::BootstrapConfig;
use polyglot_core::codeexec::SandboxConfig;
use polyglot_core::llmgateway::{
    EndpointConfig, Gateway, ModelProfile, DEFAULT_MAX_TOKENS, DEFAULT_SYSTEM_PROMPT,
    DEFAULT_TEMPERATURE,
};
use polyglot_core::xlingual::ToyConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Model name sent to the endpoint and used as the report label.
    pub name: String,
    pub system_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            name: "model".into(),
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub tasks: PathBuf,
    pub translations: PathBuf,
}

/// The projected-input stack served by the built-in toy decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpSection {
    pub laser: PathBuf,
    pub projector: PathBuf,
    pub subwords: Option<PathBuf>,
    pub system_prompt: String,
    pub max_new_tokens: usize,
    pub toy: ToyConfig,
}

impl Default for LpSection {
    fn default() -> Self {
        Self {
            laser: PathBuf::new(),
            projector: PathBuf::new(),
            subwords: None,
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
            max_new_tokens: 64,
            toy: ToyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Top-level seed; every other seed is derived from it.
    pub seed: u64,
    /// Bound on concurrent requests and sandbox workers.
    pub workers: usize,
    pub out_dir: PathBuf,
    /// Replay this transcript instead of calling an endpoint.
    pub transcript: Option<PathBuf>,
    pub model: ModelSection,
    pub endpoint: EndpointConfig,
    pub corpus: CorpusSection,
    pub sandbox: SandboxConfig,
    pub lp: Option<LpSection>,
    pub bootstrap: BootstrapConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 4,
            out_dir: PathBuf::from("runs"),
            transcript: None,
            model: ModelSection::default(),
            endpoint: EndpointConfig::default(),
            corpus: CorpusSection::default(),
            sandbox: SandboxConfig::default(),
            lp: None,
            bootstrap: BootstrapConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a TOML file. Relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if cfg.endpoint.api_key.is_some() {
            bail!("{}: api_key is read from POLYGLOT_API_KEY or OPENAI_API_KEY, not the config file", path.display());
        }
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.corpus.tasks);
        fix(&mut self.corpus.translations);
        if let Some(t) = &mut self.transcript {
            fix(t);
        }
        if let Some(lp) = &mut self.lp {
            fix(&mut lp.laser);
            fix(&mut lp.projector);
            if let Some(s) = &mut lp.subwords {
                fix(s);
            }
        }
    }

    pub fn profile(&self) -> ModelProfile {
        ModelProfile {
            model_name: self.model.name.clone(),
            system_prompt: self.model.system_prompt.clone(),
            temperature: self.model.temperature,
            max_tokens: self.model.max_tokens,
            seed: Some(self.seed),
        }
    }

    /// Replay gateway when a transcript is configured, otherwise a recording live one.
    pub fn gateway(&self) -> Result<Gateway> {
        if let Some(t) = &self.transcript {
            return Gateway::replay_file(t)
                .with_context(|| format!("loading transcript {}", t.display()));
        }
        let mut endpoint = self.endpoint.clone();
        endpoint.apply_env(|k| std::env::var(k).ok());
        if endpoint.model_name.is_empty() {
            endpoint.model_name = self.model.name.clone();
        }
        Ok(Gateway::live(endpoint)?.recording())
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.model.name.trim().is_empty() {
            bail!("model.name must not be empty");
        }
        Ok(())
    }
}
