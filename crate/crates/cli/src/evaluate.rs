//! The `evaluate` pipeline: prompts → responses → outcomes → metrics → report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use polyglot_core::align::{load_table, SubwordMap};
use polyglot_core::codeexec::{classify_batch, Classified, Mode, ModelResponse, Sandbox};
use polyglot_core::corpus::{load_corpus, Corpus};
use polyglot_core::llmgateway::{cot_prompt, ChatRequest, Gateway, GatewayError, ModelProfile};
use polyglot_core::metrics::{compute_rates, tally, MetricsRow, ReportFormat};
use polyglot_core::projector::Projector;
use polyglot_core::xlingual::{zero_shot_infer, LpStack, SequenceCoverage, ToyDecoder};
use polyglot_core::{jsonl, Lang};
use serde::{Deserialize, Serialize};

use crate::config::{CorpusSection, ModelSection, RunConfig};
use crate::report::render_rows;
use crate::scripts::{write_scripts, ScriptItem};

pub const MANIFEST: &str = "manifest.json";
pub const RESPONSES: &str = "responses.jsonl";
pub const OUTCOMES: &str = "outcomes.jsonl";
pub const METRICS: &str = "metrics.json";
pub const FAILURES: &str = "failures.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prompt,
    Generation,
    Execution,
}

/// A sample that produced no outcome.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SampleFailure {
    pub lang: Lang,
    pub task_id: String,
    pub mode: Mode,
    pub stage: Stage,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub lang: Lang,
    pub responses: usize,
    pub outcomes: usize,
    pub failures: usize,
    pub has_metrics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub tool_version: String,
    pub seed: u64,
    pub mode: Mode,
    pub langs: Vec<Lang>,
    pub model: ModelSection,
    pub corpus: CorpusSection,
    pub backend: String,
    pub workers: usize,
    pub n_tasks: usize,
    pub cells: Vec<CellSummary>,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub config: RunConfig,
    pub mode: Mode,
    pub langs: Vec<Lang>,
    /// Run directory name; a UTC timestamp when absent.
    pub run_id: Option<String>,
    /// Pre-generated responses used instead of querying a model.
    pub responses: Option<PathBuf>,
    pub emit_scripts: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub run_dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub failures: Vec<SampleFailure>,
    /// Configured languages that ended without a metrics row.
    pub missing_cells: Vec<Lang>,
}

impl EvalSummary {
    pub fn is_complete(&self) -> bool {
        self.missing_cells.is_empty()
    }
}

#[derive(Serialize)]
struct CoverageRecord<'a> {
    task_id: &'a str,
    #[serde(flatten)]
    coverage: &'a SequenceCoverage,
}

pub fn timestamp_id() -> String {
    chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string()
}

pub fn validate(opts: &EvalOptions) -> Result<()> {
    opts.config.validate()?;
    if opts.langs.is_empty() {
        bail!("no languages selected");
    }
    if opts.mode == Mode::Cot && opts.langs.contains(&Lang::En) {
        bail!("{} (drop `en` from the languages of a cot run)", GatewayError::CotUndefinedForEnglish);
    }
    if opts.mode == Mode::Lp && opts.responses.is_none() && opts.config.lp.is_none() {
        bail!("mode lp needs an [lp] section with laser table and projector, or --responses");
    }
    Ok(())
}

/// Create `<out_dir>/<run_id>/`, refusing to reuse an existing directory.
pub fn create_run_dir(out_dir: &Path, run_id: &str) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let dir = out_dir.join(run_id);
    fs::create_dir(&dir).with_context(|| format!("creating run directory {}", dir.display()))?;
    Ok(dir)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    jsonl::write(path, records).with_context(|| format!("writing {}", path.display()))
}

fn texts(
    gateway: &Gateway,
    reqs: &[ChatRequest],
    workers: usize,
) -> Result<Vec<Result<String, String>>> {
    Ok(gateway
        .batch(reqs, workers)?
        .into_iter()
        .map(|r| r.and_then(|resp| resp.text().map(str::to_string)).map_err(|e| e.to_string()))
        .collect())
}

struct Generated {
    responses: Vec<ModelResponse>,
    failures: Vec<SampleFailure>,
    coverage: Vec<(String, SequenceCoverage)>,
}

fn failure(task_id: &str, lang: Lang, mode: Mode, stage: Stage, error: impl ToString) -> SampleFailure {
    SampleFailure {
        lang,
        task_id: task_id.to_string(),
        mode,
        stage,
        error: error.to_string(),
    }
}

fn query_cell(
    corpus: &Corpus,
    lang: Lang,
    mode: Mode,
    gateway: &Gateway,
    profile: &ModelProfile,
    workers: usize,
) -> Result<Generated> {
    let mut out = Generated {
        responses: Vec::new(),
        failures: Vec::new(),
        coverage: Vec::new(),
    };
    let mut items = Vec::new();
    for task in corpus.tasks() {
        match corpus.prompt(&task.id, lang) {
            Some(p) => items.push((task.id.clone(), p.to_string())),
            None => out
                .failures
                .push(failure(&task.id, lang, mode, Stage::Prompt, format!("no {lang} prompt"))),
        }
    }
    let prompts: Vec<(String, Result<String, String>)> = if mode == Mode::Cot {
        let reqs = items
            .iter()
            .map(|(_, p)| Ok(profile.request(cot_prompt(p, lang)?)))
            .collect::<Result<Vec<_>, GatewayError>>()?;
        let translated = texts(gateway, &reqs, workers)?;
        items
            .into_iter()
            .zip(translated)
            .map(|((id, _), t)| (id, t.map(|s| s.trim().to_string()).map_err(|e| format!("back-translation: {e}"))))
            .collect()
    } else {
        items.into_iter().map(|(id, p)| (id, Ok(p))).collect()
    };

    let mut ready = Vec::new();
    for (id, p) in prompts {
        match p {
            Ok(p) => ready.push((id, p)),
            Err(e) => out.failures.push(failure(&id, lang, mode, Stage::Generation, e)),
        }
    }
    let reqs: Vec<ChatRequest> = ready.iter().map(|(_, p)| profile.request(p.clone())).collect();
    for ((id, _), r) in ready.into_iter().zip(texts(gateway, &reqs, workers)?) {
        match r {
            Ok(raw_text) => out.responses.push(ModelResponse {
                task_id: id,
                lang,
                mode,
                raw_text,
            }),
            Err(e) => out.failures.push(failure(&id, lang, mode, Stage::Generation, e)),
        }
    }
    Ok(out)
}

fn lp_cell(corpus: &Corpus, lang: Lang, stack: &LpStack<'_>) -> Generated {
    let mut out = Generated {
        responses: Vec::new(),
        failures: Vec::new(),
        coverage: Vec::new(),
    };
    for task in corpus.tasks() {
        let Some(prompt) = corpus.prompt(&task.id, lang) else {
            out.failures
                .push(failure(&task.id, lang, Mode::Lp, Stage::Prompt, format!("no {lang} prompt")));
            continue;
        };
        match zero_shot_infer(&task.id, prompt, lang, stack) {
            Ok((resp, cov)) => {
                out.responses.push(resp);
                out.coverage.push((task.id.clone(), cov));
            }
            Err(e) => out.failures.push(failure(&task.id, lang, Mode::Lp, Stage::Generation, e)),
        }
    }
    out
}

fn pregenerated(path: &Path, mode: Mode, langs: &[Lang]) -> Result<BTreeMap<Lang, Vec<ModelResponse>>> {
    let mut by_lang: BTreeMap<Lang, Vec<ModelResponse>> = BTreeMap::new();
    for n in jsonl::read::<ModelResponse>(path)? {
        let r = n.value;
        if r.mode != mode {
            bail!("{}:{}: response mode {} differs from run mode {mode}", path.display(), n.line, r.mode);
        }
        if langs.contains(&r.lang) {
            by_lang.entry(r.lang).or_default().push(r);
        }
    }
    Ok(by_lang)
}

/// Run one evaluation and persist every intermediate under a fresh run directory.
pub fn run_eval(opts: &EvalOptions) -> Result<EvalSummary> {
    validate(opts)?;
    let cfg = &opts.config;
    let corpus = load_corpus(&cfg.corpus.tasks, &cfg.corpus.translations)?;
    let sandbox = Sandbox::new(cfg.sandbox.clone())?;
    let mut langs = opts.langs.clone();
    langs.sort();
    langs.dedup();

    let mut generated: BTreeMap<Lang, Generated> = BTreeMap::new();
    let mut gateway = None;
    let backend;
    if let Some(path) = &opts.responses {
        backend = format!("responses {}", path.display());
        let mut by_lang = pregenerated(path, opts.mode, &langs)?;
        for &lang in &langs {
            let responses = by_lang.remove(&lang).unwrap_or_default();
            generated.insert(lang, Generated { responses, failures: Vec::new(), coverage: Vec::new() });
        }
    } else if opts.mode == Mode::Lp {
        let lp = cfg.lp.as_ref().expect("validated");
        backend = format!("toy decoder seed {}", lp.toy.seed);
        let laser = load_table(&lp.laser)?;
        let projector = Projector::load(&lp.projector)?;
        let subwords = lp.subwords.as_deref().map(SubwordMap::load).transpose()?;
        let model = ToyDecoder::new(lp.toy)?;
        let llm_table = model.embedding_table();
        let stack = LpStack {
            laser: &laser,
            projector: &projector,
            llm_table: &llm_table,
            subwords: subwords.as_ref(),
            model: &model,
            system_prompt: lp.system_prompt.clone(),
            max_new_tokens: lp.max_new_tokens,
        };
        for &lang in &langs {
            generated.insert(lang, lp_cell(&corpus, lang, &stack));
        }
    } else {
        backend = match &cfg.transcript {
            Some(t) => format!("replay {}", t.display()),
            None => format!("live {}", cfg.endpoint.base_url),
        };
        let g = cfg.gateway()?;
        let profile = cfg.profile();
        for &lang in &langs {
            generated.insert(lang, query_cell(&corpus, lang, opts.mode, &g, &profile, cfg.workers)?);
        }
        gateway = Some(g);
    }

    let all: Vec<ModelResponse> = generated.values().flat_map(|g| g.responses.iter().cloned()).collect();
    let mut classified: BTreeMap<Lang, Vec<Classified>> = BTreeMap::new();
    let mut failures: Vec<SampleFailure> = generated.values().flat_map(|g| g.failures.iter().cloned()).collect();
    let mut order = all.clone();
    order.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    for (resp, result) in order.iter().zip(classify_batch(&all, &corpus, &sandbox, cfg.workers)) {
        match result {
            Ok(c) => classified.entry(c.response.lang).or_default().push(c),
            Err(e) => failures.push(failure(&resp.task_id, resp.lang, resp.mode, Stage::Execution, e)),
        }
    }
    failures.sort();

    let run_id = opts.run_id.clone().unwrap_or_else(timestamp_id);
    let run_dir = create_run_dir(&cfg.out_dir, &run_id)?;
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    let mut missing = Vec::new();
    for &lang in &langs {
        let dir = run_dir.join(opts.mode.as_str()).join(lang.code());
        fs::create_dir_all(&dir)?;
        let gen = &generated[&lang];
        write_jsonl(&dir.join(RESPONSES), &gen.responses)?;
        let cell = classified.get(&lang).map(Vec::as_slice).unwrap_or(&[]);
        let records: Vec<_> = cell.iter().map(Classified::record).collect();
        write_jsonl(&dir.join(OUTCOMES), &records)?;
        if !gen.coverage.is_empty() {
            let cov: Vec<CoverageRecord> = gen
                .coverage
                .iter()
                .map(|(task_id, coverage)| CoverageRecord { task_id, coverage })
                .collect();
            write_jsonl(&dir.join("coverage.jsonl"), &cov)?;
        }
        let cell_failures: Vec<&SampleFailure> = failures.iter().filter(|f| f.lang == lang).collect();
        if !cell_failures.is_empty() {
            write_jsonl(&dir.join(FAILURES), &cell_failures)?;
        }
        let row = tally(&records).and_then(|t| compute_rates(&cfg.model.name, lang, opts.mode, t));
        let has_metrics = row.is_ok();
        match row {
            Ok(row) => {
                write_json(&dir.join(METRICS), &row)?;
                rows.push(row);
            }
            Err(_) => missing.push(lang),
        }
        cells.push(CellSummary {
            lang,
            responses: gen.responses.len(),
            outcomes: records.len(),
            failures: cell_failures.len(),
            has_metrics,
        });
    }

    if !rows.is_empty() {
        fs::write(run_dir.join("report.txt"), render_rows(&rows, ReportFormat::Table)?)?;
        fs::write(run_dir.join("report.csv"), render_rows(&rows, ReportFormat::Csv)?)?;
    }
    if !failures.is_empty() {
        write_jsonl(&run_dir.join(FAILURES), &failures)?;
    }
    if let Some(t) = gateway.as_ref().and_then(Gateway::transcript) {
        t.write(run_dir.join("transcript.jsonl"))?;
    }
    if let Some(dir) = &opts.emit_scripts {
        let items: Vec<ScriptItem> = classified
            .values()
            .flatten()
            .filter_map(|c| ScriptItem::from_classified(c, &corpus))
            .collect();
        write_scripts(dir, &items, &cfg.sandbox.interpreter_command)?;
    }
    write_json(
        &run_dir.join(MANIFEST),
        &Manifest {
            run_id,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            mode: opts.mode,
            langs: langs.clone(),
            model: cfg.model.clone(),
            corpus: cfg.corpus.clone(),
            backend,
            workers: cfg.workers,
            n_tasks: corpus.len(),
            cells,
            failures: failures.len(),
        },
    )?;
    Ok(EvalSummary {
        run_dir,
        rows,
        failures,
        missing_cells: missing,
    })
}
