use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use polyglot_cli::config::{LpSection, RunConfig};
use polyglot_cli::evaluate::{run_eval, EvalOptions};
use polyglot_cli::infer::{infer_gateway, infer_lp};
use polyglot_cli::report::{read_manifest, report_runs};
use polyglot_cli::scripts::export_run_scripts;
use polyglot_cli::train::{train_projector, PairSource, TrainOptions};
use polyglot_cli::run_bootstrap;
use polyglot_core::bootstrap::RELAXED_THRESHOLD;
use polyglot_core::codeexec::{Mode, Sandbox};
use polyglot_core::corpus::load_corpus;
use polyglot_core::metrics::ReportFormat;
use polyglot_core::projector::{Activation, Optimizer, TrainConfig};
use polyglot_core::Lang;

#[derive(Parser)]
#[command(name = "polyglot", version, about = "Multilingual code-generation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Query a model per language, execute the answers and report error rates.
    Evaluate(EvaluateArgs),
    /// Build a round-trip-filtered multilingual fine-tuning dataset.
    Bootstrap(BootstrapArgs),
    /// Train the embedding projector on English word pairs.
    TrainProjector(TrainArgs),
    /// Answer a single prompt.
    Infer(InferArgs),
    /// Recompute metrics from the outcomes of one or more runs.
    Report(ReportArgs),
    /// Write one shell script per stored response of a run.
    ExportScripts(ExportArgs),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Top-level seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Replay this transcript instead of calling the endpoint.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = &self.replay {
            cfg.transcript = Some(r.clone());
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    /// orig, cot, bft or lp.
    #[arg(long, default_value = "orig")]
    mode: Mode,
    /// Comma-separated language codes; all six by default (five for cot).
    #[arg(long, value_delimiter = ',')]
    langs: Vec<Lang>,
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    translations: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run directory name (default: UTC timestamp).
    #[arg(long)]
    run_id: Option<String>,
    /// Evaluate pre-generated responses instead of querying a model.
    #[arg(long)]
    responses: Option<PathBuf>,
    /// Also write one shell script per sample into this directory.
    #[arg(long)]
    emit_scripts: Option<PathBuf>,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    /// Use the 0.8 threshold.
    #[arg(long, conflicts_with = "threshold")]
    relaxed: bool,
    #[arg(long, value_delimiter = ',')]
    langs: Vec<Lang>,
    #[arg(long)]
    n_attempts: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Pairs JSONL; alternatively build pairs with --tasks/--laser/--llm/--subwords.
    #[arg(long, conflicts_with = "tasks")]
    pairs: Option<PathBuf>,
    #[arg(long, requires_all = ["laser", "llm", "subwords"])]
    tasks: Option<PathBuf>,
    #[arg(long)]
    laser: Option<PathBuf>,
    #[arg(long)]
    llm: Option<PathBuf>,
    #[arg(long)]
    subwords: Option<PathBuf>,
    /// Keep the built pairs here.
    #[arg(long)]
    save_pairs: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Training report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Samples per step; 0 for full batch.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value = "sgd")]
    optimizer: Optimizer,
    #[arg(long, default_value_t = 2048)]
    hidden: usize,
    #[arg(long, default_value = "identity")]
    activation: Activation,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "lp")]
    mode: Mode,
    #[arg(long)]
    lang: Lang,
    #[arg(long, conflicts_with = "prompt_file")]
    prompt: Option<String>,
    #[arg(long)]
    prompt_file: Option<PathBuf>,
    #[arg(long)]
    projector: Option<PathBuf>,
    #[arg(long)]
    laser: Option<PathBuf>,
    #[arg(long)]
    subwords: Option<PathBuf>,
    #[arg(long)]
    toy_seed: Option<u64>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// Save the projected input sequence (EMBS container).
    #[arg(long)]
    embeddings_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "run", required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Config supplying the interpreter; corpus paths default to the run manifest.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn evaluate(a: EvaluateArgs) -> Result<ExitCode> {
    let mut cfg = a.common.load()?;
    if let Some(t) = a.tasks {
        cfg.corpus.tasks = t;
    }
    if let Some(t) = a.translations {
        cfg.corpus.translations = t;
    }
    if let Some(o) = a.out_dir {
        cfg.out_dir = o;
    }
    let langs = if !a.langs.is_empty() {
        a.langs
    } else if a.mode == Mode::Cot {
        Lang::TRANSLATED.to_vec()
    } else {
        Lang::ALL.to_vec()
    };
    let summary = run_eval(&EvalOptions {
        config: cfg,
        mode: a.mode,
        langs,
        run_id: a.run_id,
        responses: a.responses,
        emit_scripts: a.emit_scripts,
    })?;
    println!("run: {}", summary.run_dir.display());
    if let Ok(table) = fs::read_to_string(summary.run_dir.join("report.txt")) {
        print!("{table}");
    }
    for f in &summary.failures {
        eprintln!("failed: {} {} {:?}: {}", f.lang, f.task_id, f.stage, f.error);
    }
    if summary.is_complete() {
        Ok(ExitCode::SUCCESS)
    } else {
        let missing: Vec<String> = summary.missing_cells.iter().map(|l| l.to_string()).collect();
        eprintln!("no metrics for: {}", missing.join(", "));
        Ok(ExitCode::from(2))
    }
}

fn bootstrap(a: BootstrapArgs) -> Result<ExitCode> {
    let mut cfg = a.common.load()?;
    if let Some(t) = a.threshold {
        cfg.bootstrap.threshold = t;
    }
    if a.relaxed {
        cfg.bootstrap.threshold = RELAXED_THRESHOLD;
    }
    if !a.langs.is_empty() {
        cfg.bootstrap.target_langs = a.langs;
    }
    if let Some(n) = a.n_attempts {
        cfg.bootstrap.n_attempts = n;
    }
    let s = run_bootstrap(&cfg, &a.out)?;
    println!("candidates: {}", s.candidates);
    println!("round trips audited: {}", s.audit.len());
    for (lang, n) in &s.accepted {
        println!("accepted {lang}: {n}");
    }
    println!("dataset: {} records -> {}", s.meta.total, s.out_dir.join(polyglot_cli::bootstrap::DATASET).display());
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    Ok(ExitCode::SUCCESS)
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let source = match (a.pairs, a.tasks) {
        (Some(p), _) => PairSource::File(p),
        (None, Some(tasks)) => PairSource::Build {
            tasks,
            laser: a.laser.expect("required by clap"),
            llm: a.llm.expect("required by clap"),
            subwords: a.subwords.expect("required by clap"),
            save_pairs: a.save_pairs,
        },
        (None, None) => bail!("give --pairs, or --tasks with --laser, --llm and --subwords"),
    };
    let summary = train_projector(&TrainOptions {
        source,
        config: TrainConfig {
            epochs: a.epochs,
            learning_rate: a.lr,
            batch_size: a.batch_size,
            seed: a.seed,
            optimizer: a.optimizer,
            hidden: a.hidden,
            activation: a.activation,
        },
        out: a.out,
    })?;
    println!("pairs: {}", summary.report.n_pairs);
    println!("final mse: {:.6e}", summary.report.final_mse);
    if let Some(ols) = summary.ols_mse {
        println!("closed-form affine mse: {ols:.6e}");
    }
    println!("wall time: {:.2}s", summary.report.wall_secs);
    if let Some(path) = a.report {
        polyglot_cli::evaluate::write_json(&path, &summary)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn infer(a: InferArgs) -> Result<ExitCode> {
    let prompt = match (a.prompt, &a.prompt_file) {
        (Some(p), _) => p,
        (None, Some(f)) => fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?,
        (None, None) => bail!("give --prompt or --prompt-file"),
    };
    let cfg = a.common.load()?;
    let out = if a.mode == Mode::Lp {
        let mut lp = cfg.lp.clone().unwrap_or_else(LpSection::default);
        if let Some(p) = a.projector {
            lp.projector = p;
        }
        if let Some(l) = a.laser {
            lp.laser = l;
        }
        if a.subwords.is_some() {
            lp.subwords = a.subwords;
        }
        if let Some(s) = a.toy_seed {
            lp.toy.seed = s;
        }
        if let Some(n) = a.max_new_tokens {
            lp.max_new_tokens = n;
        }
        if lp.projector.as_os_str().is_empty() || lp.laser.as_os_str().is_empty() {
            bail!("lp inference needs --projector and --laser (or an [lp] config section)");
        }
        infer_lp(&lp, a.lang, &prompt, a.embeddings_out.as_deref())?
    } else {
        infer_gateway(&cfg, a.mode, a.lang, &prompt)?
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn report(a: ReportArgs) -> Result<ExitCode> {
    let dirs: Vec<&Path> = a.runs.iter().map(PathBuf::as_path).collect();
    let text = report_runs(&dirs, a.format)?;
    match a.out {
        Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn export_scripts(a: ExportArgs) -> Result<ExitCode> {
    let manifest = read_manifest(&a.run)?;
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let corpus_cfg = if a.config.is_some() { &cfg.corpus } else { &manifest.corpus };
    let corpus = load_corpus(&corpus_cfg.tasks, &corpus_cfg.translations)?;
    let sandbox = Sandbox::new(cfg.sandbox.clone())?;
    let n = export_run_scripts(&a.run, &corpus, &sandbox, &cfg.sandbox.interpreter_command, &a.out)?;
    println!("wrote {n} scripts to {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Evaluate(a) => evaluate(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::TrainProjector(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Report(a) => report(a),
        Command::ExportScripts(a) => export_scripts(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
