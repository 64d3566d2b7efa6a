mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polyglot_cli::evaluate::{Manifest, FAILURES, METRICS, OUTCOMES, RESPONSES};
use polyglot_cli::report::read_manifest;
use polyglot_cli::{run_bootstrap, run_eval, EvalOptions, RunConfig};
use polyglot_core::align::{write_pairs, EmbeddingTable, TrainingPair};
use polyglot_core::bootstrap::{meta_path, DatasetMeta, TrainingRecord};
use polyglot_core::codeexec::Mode;
use polyglot_core::jsonl;
use polyglot_core::metrics::{MetricsRow, OutcomeTally};
use polyglot_core::xlingual::{EmbeddingSequence, Provenance, ToyConfig, ToyDecoder};
use polyglot_core::Lang;

fn polyglot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyglot")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, toml::to_string(cfg).unwrap()).unwrap();
    p
}

fn expected_tally(lang_idx: usize) -> OutcomeTally {
    let corpus = common::corpus();
    let mut t = OutcomeTally::default();
    for ti in 0..corpus.len() {
        let (_, class, complete) = common::answer(&corpus, ti, lang_idx);
        t.add(class, complete);
    }
    t
}

#[test]
fn replayed_orig_run_matches_hand_labels() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::config(tmp.path(), None);
    let tpath = tmp.path().join("transcript.jsonl");
    common::eval_transcript(&cfg, &Lang::ALL, false).write(&tpath).unwrap();
    cfg.transcript = Some(tpath);
    let s = run_eval(&EvalOptions {
        config: cfg,
        mode: Mode::Orig,
        langs: Lang::ALL.to_vec(),
        run_id: Some("r1".into()),
        responses: None,
        emit_scripts: None,
    })
    .unwrap();
    assert!(s.is_complete());
    assert!(s.failures.is_empty(), "{:?}", s.failures);
    assert_eq!(s.rows.len(), 6);
    for (li, lang) in Lang::ALL.iter().enumerate() {
        let row = s.rows.iter().find(|r| r.lang == *lang).unwrap();
        assert_eq!(row.tally, expected_tally(li), "{lang}");
        let dir = s.run_dir.join("orig").join(lang.code());
        for f in [RESPONSES, OUTCOMES, METRICS] {
            assert!(dir.join(f).is_file(), "{}", dir.join(f).display());
        }
        let stored: MetricsRow = serde_json::from_str(&fs::read_to_string(dir.join(METRICS)).unwrap()).unwrap();
        assert_eq!(&stored, row);
    }
    // Slot cycle over five tasks gives every language two passes, one syntax
    // error and two logical failures, one of them without code.
    let en = &s.rows[0];
    assert_eq!((en.tally.n_all_passed, en.tally.n_syntax, en.tally.n_logical, en.tally.n_complete), (2, 1, 2, 3));
    assert_eq!(en.atpr_pct, 40.0);
    assert_eq!(en.ccr_pct, 60.0);
    let m: Manifest = read_manifest(&s.run_dir).unwrap();
    assert_eq!(m.seed, 11);
    assert_eq!(m.n_tasks, 5);
    assert!(m.cells.iter().all(|c| c.has_metrics && c.outcomes == 5));
}

#[test]
fn binary_evaluate_report_and_scripts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::config(&tmp.path().join("runs"), None);
    let tpath = tmp.path().join("transcript.jsonl");
    common::eval_transcript(&cfg, &Lang::ALL, false).write(&tpath).unwrap();
    let config = write_config(tmp.path(), &cfg);
    let scripts = tmp.path().join("scripts");
    let o = polyglot(&[
        "evaluate", "--config", config.to_str().unwrap(), "--replay", tpath.to_str().unwrap(),
        "--langs", "en,es", "--run-id", "a", "--emit-scripts", scripts.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = tmp.path().join("runs/a");
    assert!(String::from_utf8_lossy(&o.stdout).contains("TotalER"));

    // The report is recomputable from stored outcomes alone.
    let o = polyglot(&["report", "--run", run.to_str().unwrap(), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), fs::read_to_string(run.join("report.csv")).unwrap());

    let emitted: Vec<_> = fs::read_dir(&scripts).unwrap().flatten().collect();
    assert_eq!(emitted.len(), 10);
    let correct = scripts.join("1_en_orig.sh");
    assert!(Command::new("bash").arg(&correct).output().unwrap().status.success());
    let wrong = scripts.join("4_en_orig.sh");
    assert!(!Command::new("bash").arg(&wrong).output().unwrap().status.success());

    let again = tmp.path().join("exported");
    let o = polyglot(&["export-scripts", "--run", run.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for e in emitted {
        let name = e.file_name();
        assert_eq!(fs::read(e.path()).unwrap(), fs::read(again.join(&name)).unwrap(), "{name:?}");
    }

    let o = polyglot(&["evaluate", "--config", config.to_str().unwrap(), "--replay", tpath.to_str().unwrap(), "--langs", "en", "--run-id", "a"]);
    assert!(!o.status.success(), "reusing a run directory must fail");
}

#[test]
fn cot_requires_non_english_and_reports_against_orig() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::config(&tmp.path().join("runs"), None);
    let config = write_config(tmp.path(), &cfg);
    let o = polyglot(&["evaluate", "--config", config.to_str().unwrap(), "--mode", "cot", "--langs", "en,es"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("CoT undefined for English"), "{}", stderr(&o));

    let langs = [Lang::Es, Lang::Ja];
    let mut orig = common::eval_transcript(&cfg, &[Lang::En], false);
    for r in common::eval_transcript(&cfg, &langs, true).records() {
        orig.push(r.request.clone(), r.response.clone());
    }
    let tpath = tmp.path().join("t.jsonl");
    orig.write(&tpath).unwrap();
    for (mode, langs, id) in [("orig", "en", "o"), ("cot", "es,ja", "c")] {
        let o = polyglot(&["evaluate", "--config", config.to_str().unwrap(), "--replay", tpath.to_str().unwrap(), "--mode", mode, "--langs", langs, "--run-id", id]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let runs = tmp.path().join("runs");
    let o = polyglot(&["report", "--run", runs.join("o").to_str().unwrap(), "--run", runs.join("c").to_str().unwrap(), "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let gaps = v["gaps"].as_array().unwrap();
    assert!(gaps.iter().any(|g| g["mode"] == "cot" && g["reference_mode"] == "orig"));
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
}

#[test]
fn missing_cell_gives_nonzero_exit_and_lists_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::config(&tmp.path().join("runs"), None);
    let tpath = tmp.path().join("t.jsonl");
    common::eval_transcript(&cfg, &[Lang::En], false).write(&tpath).unwrap();
    let config = write_config(tmp.path(), &cfg);
    let o = polyglot(&["evaluate", "--config", config.to_str().unwrap(), "--replay", tpath.to_str().unwrap(), "--langs", "en,hi", "--run-id", "x"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("no metrics for: hi"));
    let run = tmp.path().join("runs/x");
    let failures = jsonl::read::<serde_json::Value>(&run.join(FAILURES)).unwrap();
    assert_eq!(failures.len(), 5);
    assert!(failures.iter().all(|f| f.value["error"].as_str().unwrap().contains("unrecorded request")));
    assert!(run.join("orig/en/metrics.json").is_file());
    assert!(!run.join("orig/hi/metrics.json").exists());
}

#[test]
fn bootstrap_partitions_and_threshold_boundary() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::config(tmp.path(), None);
    cfg.bootstrap.target_langs = vec![Lang::Ja, Lang::Es];
    let tpath = tmp.path().join("t.jsonl");
    common::bootstrap_transcript(&cfg).write(&tpath).unwrap();
    cfg.transcript = Some(tpath.clone());
    let out = tmp.path().join("boot");
    let s = run_bootstrap(&cfg, &out).unwrap();
    assert_eq!(s.audit.len(), 8);
    assert_eq!(s.accepted[&Lang::Es], 1);
    assert_eq!(s.accepted[&Lang::Ja], 2);
    for p in ["en", "es", "ja"] {
        assert!(out.join("partitions").join(format!("{p}.jsonl")).is_file());
    }
    let data: Vec<TrainingRecord> = jsonl::read(&out.join("dataset.jsonl")).unwrap().into_iter().map(|n| n.value).collect();
    assert_eq!(data.len(), 4 + 3);
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(meta_path(&out.join("dataset.jsonl"))).unwrap()).unwrap();
    assert_eq!(meta.seed, 11);
    assert_eq!(meta.per_lang[&Lang::En], 4);

    let config = write_config(tmp.path(), &cfg);
    let o = polyglot(&["bootstrap", "--config", config.to_str().unwrap(), "--out", tmp.path().join("b1").to_str().unwrap(), "--threshold", "1.0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("empty dataset"), "{}", stderr(&o));
    assert_eq!(jsonl::read::<serde_json::Value>(&tmp.path().join("b1/audit.jsonl")).unwrap().len(), 8);

    let o = polyglot(&["bootstrap", "--config", config.to_str().unwrap(), "--out", tmp.path().join("b2").to_str().unwrap(), "--relaxed"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("accepted es: 2") && out.contains("accepted ja: 3"), "{out}");
}

#[test]
fn train_projector_then_infer_lp() {
    let tmp = tempfile::tempdir().unwrap();
    let toy = ToyDecoder::new(ToyConfig { seed: 3, ..Default::default() }).unwrap();
    let llm = toy.embedding_table();
    // Encoder space: a fixed 8-d code per English word; Spanish words share it.
    let words = ["add", "two", "numbers", "list", "string", "reverse", "sum", "digits"];
    let es = ["sumar", "dos", "numeros", "lista", "cadena", "invertir", "suma", "digitos"];
    let code = |i: usize| -> Vec<f32> { (0..8).map(|j| if j == i { 1.0 } else { 0.05 * j as f32 }).collect() };
    let mut rows = Vec::new();
    let mut pairs = Vec::new();
    for (i, w) in words.iter().enumerate() {
        rows.push((w.to_string(), code(i)));
        rows.push((es[i].to_string(), code(i)));
        let target = llm.get(&w[..1]).unwrap();
        pairs.push(TrainingPair {
            word: w.to_string(),
            h_laser: code(i).iter().map(|&x| x as f64).collect(),
            h_llm: target.iter().map(|&x| x as f64).collect(),
        });
    }
    let laser = tmp.path().join("laser.embt");
    EmbeddingTable::new("laser", 8, false, rows).unwrap().save(&laser).unwrap();
    let pairs_path = tmp.path().join("pairs.jsonl");
    write_pairs(&pairs_path, &pairs).unwrap();

    let proj = tmp.path().join("p.bin");
    let report = tmp.path().join("train.json");
    let o = polyglot(&[
        "train-projector", "--pairs", pairs_path.to_str().unwrap(), "--out", proj.to_str().unwrap(),
        "--epochs", "300", "--hidden", "16", "--optimizer", "adam", "--batch-size", "0", "--lr", "0.01",
        "--seed", "5", "--report", report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["report"]["trace"].as_array().unwrap().len(), 300);
    assert!(r["report"]["final_mse"].as_f64().unwrap().is_finite());

    let seq = tmp.path().join("seq.embs");
    let o = polyglot(&[
        "infer", "--mode", "lp", "--lang", "es", "--prompt", "sumar dos numeros xyz", "--projector", proj.to_str().unwrap(),
        "--laser", laser.to_str().unwrap(), "--toy-seed", "3", "--max-new-tokens", "4", "--embeddings-out", seq.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["response"]["mode"], "lp");
    assert_eq!(v["coverage"]["dropped_words"], serde_json::json!(["xyz"]));
    let s = EmbeddingSequence::load(&seq).unwrap();
    assert_eq!(s.dim, 64);
    let projected = s.provenance.iter().filter(|&&p| p == Provenance::ProjectedWord).count();
    assert_eq!(projected, 3);

    let o = polyglot(&["train-projector", "--out", proj.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn unknown_config_keys_and_file_credentials_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("c.toml");
    fs::write(&p, "seed = 1\nsede = 2\n").unwrap();
    assert!(RunConfig::load(&p).unwrap_err().to_string().contains("parsing"));
    fs::write(&p, "[endpoint]\napi_key = \"sk-123\"\n").unwrap();
    assert!(format!("{:#}", RunConfig::load(&p).unwrap_err()).contains("POLYGLOT_API_KEY"));
    fs::write(&p, "[corpus]\ntasks = \"t.jsonl\"\n[model]\nname = \"m\"\n").unwrap();
    let cfg = RunConfig::load(&p).unwrap();
    assert_eq!(cfg.corpus.tasks, tmp.path().join("t.jsonl"));
    assert_eq!(cfg.profile().seed, Some(0));
}
