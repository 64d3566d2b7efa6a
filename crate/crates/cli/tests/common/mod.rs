//! Fixture builders shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use polyglot_cli::config::{CorpusSection, ModelSection, RunConfig};
use polyglot_core::bootstrap::{generation_requests, to_english_instruction, to_lang_instruction};
use polyglot_core::codeexec::{OutcomeClass, SandboxConfig};
use polyglot_core::corpus::{load_corpus, Corpus};
use polyglot_core::llmgateway::{cot_prompt, ChatResponse, TokenCounts, Transcript};
use polyglot_core::Lang;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn corpus() -> Corpus {
    let d = fixtures();
    load_corpus(&d.join("tasks.jsonl"), &d.join("translations.jsonl")).unwrap()
}

/// Config over the five-task fixture corpus writing runs under `out`.
pub fn config(out: &Path, transcript: Option<PathBuf>) -> RunConfig {
    let d = fixtures();
    RunConfig {
        seed: 11,
        workers: 4,
        out_dir: out.to_path_buf(),
        transcript,
        model: ModelSection {
            name: "fixture-7b".into(),
            ..Default::default()
        },
        corpus: CorpusSection {
            tasks: d.join("tasks.jsonl"),
            translations: d.join("translations.jsonl"),
        },
        sandbox: SandboxConfig {
            per_assertion_timeout_secs: 5.0,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Scripted answer for a (task, language) slot and its hand label.
///
/// Slots cycle through: correct, renamed correct, syntax error, wrong answer,
/// prose without code. The last two are logical failures.
pub fn answer(corpus: &Corpus, task_idx: usize, lang_idx: usize) -> (String, OutcomeClass, bool) {
    let task = &corpus.tasks()[task_idx];
    match (task_idx + lang_idx) % 5 {
        0 => (
            format!("Here is the solution:\n```python\n{}\n```\n", task.reference_solution),
            OutcomeClass::AllPassed,
            true,
        ),
        1 => {
            let name = task.reference_solution[4..].split('(').next().unwrap();
            let renamed = task.reference_solution.replacen(name, "solve", 1);
            (format!("```python\n{renamed}\n```"), OutcomeClass::AllPassed, true)
        }
        2 => (
            "```python\ndef solve(x)\n    return x\n```".into(),
            OutcomeClass::SyntaxError,
            false,
        ),
        3 => (
            "```python\ndef solve(*args):\n    return 0\n```".into(),
            OutcomeClass::LogicalFailure,
            true,
        ),
        _ => (
            "I am not sure how to solve this problem.".into(),
            OutcomeClass::LogicalFailure,
            false,
        ),
    }
}

/// Transcript answering every prompt of `langs` in `mode` (orig or cot).
pub fn eval_transcript(cfg: &RunConfig, langs: &[Lang], cot: bool) -> Transcript {
    let corpus = corpus();
    let profile = cfg.profile();
    let mut t = Transcript::new();
    for (li, &lang) in langs.iter().enumerate() {
        for (ti, task) in corpus.tasks().iter().enumerate() {
            let prompt = corpus.prompt(&task.id, lang).unwrap();
            let query = if cot {
                let req = profile.request(cot_prompt(prompt, lang).unwrap());
                t.push(req, ChatResponse::stop(format!(" {} \n", task.prompt_en)));
                task.prompt_en.clone()
            } else {
                prompt.to_string()
            };
            t.push(profile.request(query), ChatResponse::stop(answer(&corpus, ti, li).0));
        }
    }
    t
}

pub const PROBLEMS: [&str; 4] = [
    "Write a function that takes a list of integers and returns a new list with only the even numbers in their original order.",
    "Write a python function that counts how many vowels appear in a given string, ignoring the case of every letter.",
    "Write a function to merge two sorted lists into a single sorted list without using the built-in sort function.",
    "Write a function that returns the second largest distinct value in a list of numbers, or None when it does not exist.",
];

const ANSWERS: [&str; 4] = [
    "def evens(xs):\n    return [x for x in xs if x % 2 == 0]",
    "def count_vowels(s):\n    return sum(c in 'aeiou' for c in s.lower())",
    "def merge(a, b):\n    out = []\n    i = j = 0\n    while i < len(a) and j < len(b):\n        if a[i] <= b[j]:\n            out.append(a[i]); i += 1\n        else:\n            out.append(b[j]); j += 1\n    return out + a[i:] + b[j:]",
    "def second_largest(xs):\n    u = sorted(set(xs))\n    return u[-2] if len(u) > 1 else None",
];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Trip {
    /// Back-translation equals the original.
    Exact,
    /// One word near the middle replaced.
    Near,
    /// Unrelated back-translation.
    Far,
    /// Back-translation request refused by the endpoint.
    Refused,
}

/// Round-trip script per target language, indexed by problem.
pub const TRIPS: [(Lang, [Trip; 4]); 2] = [
    (Lang::Es, [Trip::Exact, Trip::Near, Trip::Far, Trip::Refused]),
    (Lang::Ja, [Trip::Near, Trip::Exact, Trip::Exact, Trip::Far]),
];

pub fn near(q: &str) -> String {
    let mut words: Vec<&str> = q.split(' ').collect();
    let mid = words.len() / 2;
    words[mid] = "banana";
    words.join(" ")
}

/// Replayable transcript for the bootstrap algorithm under `cfg`.
pub fn bootstrap_transcript(cfg: &RunConfig) -> Transcript {
    let profile = cfg.profile();
    let mut b = cfg.bootstrap.clone();
    b.seed = cfg.seed;
    b.max_in_flight = cfg.workers;
    let mut t = Transcript::new();
    let listing: String = PROBLEMS
        .iter()
        .enumerate()
        .map(|(i, q)| format!("{}. {q}\n", i + 1))
        .collect();
    for req in generation_requests(&b, &profile) {
        t.push(req, ChatResponse::stop(format!("Here are some problems:\n{listing}")));
    }
    for (q, a) in PROBLEMS.iter().zip(ANSWERS) {
        t.push(profile.request(q.to_string()), ChatResponse::stop(format!("```python\n{a}\n```")));
    }
    for (lang, trips) in TRIPS {
        for (q, trip) in PROBLEMS.iter().zip(trips) {
            let translated = format!("[{lang}] {q}");
            t.push(
                profile.request_with_system(to_lang_instruction(lang), q.to_string()),
                ChatResponse::stop(translated.clone()),
            );
            let back = profile.request_with_system(to_english_instruction(lang), translated);
            let resp = match trip {
                Trip::Exact => ChatResponse::stop(q.to_string()),
                Trip::Near => ChatResponse::stop(near(q)),
                Trip::Far => ChatResponse::stop("Sort the numbers and print them."),
                Trip::Refused => ChatResponse::new(None, "content_filter", 0.0, TokenCounts::default()),
            };
            t.push(back, resp);
        }
    }
    t
}
