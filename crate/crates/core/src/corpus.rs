//! Multilingual evaluation tasks and translation-quality statistics.
//!
//! Tasks are MBPP-style problems: an English prompt, a reference solution
//! and exactly three assertions. Each task carries either no translations or
//! one prompt for every non-English language.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};
use crate::Lang;

pub const ASSERTIONS_PER_TASK: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}:{line}: task `{task_id}` has assertion count {count}, expected 3")]
    AssertionCount {
        path: PathBuf,
        line: usize,
        task_id: String,
        count: usize,
    },
    #[error("{path}:{line}: duplicate task id `{task_id}`")]
    DuplicateTask {
        path: PathBuf,
        line: usize,
        task_id: String,
    },
    #[error("{path}:{line}: duplicate prompt for (`{task_id}`, {lang})")]
    DuplicatePrompt {
        path: PathBuf,
        line: usize,
        task_id: String,
        lang: Lang,
    },
    #[error("{path}:{line}: translation refers to unknown task `{task_id}`")]
    UnknownTask {
        path: PathBuf,
        line: usize,
        task_id: String,
    },
    #[error("{path}:{line}: empty {what} for task `{task_id}`")]
    EmptyText {
        path: PathBuf,
        line: usize,
        task_id: String,
        what: &'static str,
    },
    #[error("task `{task_id}` has {count} translations; expected 0 or 5")]
    PartialTranslations { task_id: String, count: usize },
    #[error("no rating records for language pair `{0}`")]
    EmptyPair(String),
    #[error("no rating records")]
    NoRecords,
    #[error("{path}:{line}: rating {value} outside {range}")]
    RatingRange {
        path: PathBuf,
        line: usize,
        value: i64,
        range: &'static str,
    },
}

/// One MBPP-style problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    #[serde(rename = "prompt")]
    pub prompt_en: String,
    #[serde(rename = "solution")]
    pub reference_solution: String,
    pub assertions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilingualPrompt {
    pub task_id: String,
    pub lang: Lang,
    pub text: String,
}

/// Immutable, validated task corpus.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    tasks: Vec<Task>,
    by_id: HashMap<String, usize>,
    prompts: HashMap<(String, Lang), String>,
}

impl Corpus {
    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, id: &str) -> Option<&Task> {
        self.by_id.get(id).map(|&i| &self.tasks[i])
    }

    /// Prompt text for `(task_id, lang)`; English comes from the task itself.
    pub fn prompt(&self, task_id: &str, lang: Lang) -> Option<&str> {
        if lang == Lang::En {
            return self.task(task_id).map(|t| t.prompt_en.as_str());
        }
        self.prompts
            .get(&(task_id.to_string(), lang))
            .map(String::as_str)
    }

    /// Number of prompts served, English included.
    pub fn prompt_count(&self) -> usize {
        self.tasks.len() + self.prompts.len()
    }

    pub fn has_translations(&self, task_id: &str) -> bool {
        Lang::TRANSLATED
            .iter()
            .any(|&l| self.prompts.contains_key(&(task_id.to_string(), l)))
    }
}

/// Load the tasks file and the translations file.
pub fn load_corpus(tasks_path: &Path, translations_path: &Path) -> Result<Corpus, CorpusError> {
    let tasks = jsonl::read::<Task>(tasks_path)?;
    let translations = jsonl::read::<MultilingualPrompt>(translations_path)?;
    build(tasks, tasks_path, translations, translations_path)
}

/// Same as [`load_corpus`] but from readers; paths are used in error messages only.
pub fn load_corpus_from<R1: BufRead, R2: BufRead>(
    tasks: R1,
    tasks_name: &Path,
    translations: R2,
    translations_name: &Path,
) -> Result<Corpus, CorpusError> {
    let tasks = jsonl::read_from::<Task, _>(tasks, tasks_name)?;
    let translations = jsonl::read_from::<MultilingualPrompt, _>(translations, translations_name)?;
    build(tasks, tasks_name, translations, translations_name)
}

fn build(
    tasks: Vec<jsonl::Numbered<Task>>,
    tasks_path: &Path,
    translations: Vec<jsonl::Numbered<MultilingualPrompt>>,
    translations_path: &Path,
) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    for jsonl::Numbered { line, value: task } in tasks {
        if task.assertions.len() != ASSERTIONS_PER_TASK {
            return Err(CorpusError::AssertionCount {
                path: tasks_path.to_path_buf(),
                line,
                task_id: task.id,
                count: task.assertions.len(),
            });
        }
        if task.prompt_en.trim().is_empty() {
            return Err(CorpusError::EmptyText {
                path: tasks_path.to_path_buf(),
                line,
                task_id: task.id,
                what: "prompt",
            });
        }
        if corpus.by_id.contains_key(&task.id) {
            return Err(CorpusError::DuplicateTask {
                path: tasks_path.to_path_buf(),
                line,
                task_id: task.id,
            });
        }
        corpus.by_id.insert(task.id.clone(), corpus.tasks.len());
        corpus.tasks.push(task);
    }

    for jsonl::Numbered { line, value: p } in translations {
        let path = translations_path.to_path_buf();
        if !corpus.by_id.contains_key(&p.task_id) {
            return Err(CorpusError::UnknownTask {
                path,
                line,
                task_id: p.task_id,
            });
        }
        if p.text.trim().is_empty() {
            return Err(CorpusError::EmptyText {
                path,
                line,
                task_id: p.task_id,
                what: "translation",
            });
        }
        // An English row would shadow the task prompt.
        if p.lang == Lang::En || corpus.prompts.contains_key(&(p.task_id.clone(), p.lang)) {
            return Err(CorpusError::DuplicatePrompt {
                path,
                line,
                task_id: p.task_id,
                lang: p.lang,
            });
        }
        corpus.prompts.insert((p.task_id, p.lang), p.text);
    }

    for task in &corpus.tasks {
        let count = Lang::TRANSLATED
            .iter()
            .filter(|&&l| corpus.prompts.contains_key(&(task.id.clone(), l)))
            .count();
        if count != 0 && count != Lang::TRANSLATED.len() {
            return Err(CorpusError::PartialTranslations {
                task_id: task.id.clone(),
                count,
            });
        }
    }
    Ok(corpus)
}

// ---------------------------------------------------------------------------
// Translation quality statistics

/// Binary acceptability labels from two human raters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanRatingRecord {
    pub task_id: String,
    pub lang_pair: String,
    pub rater1: u8,
    pub rater2: u8,
}

/// A 1..=5 quality rating issued by a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRatingRecord {
    pub task_id: String,
    pub lang_pair: String,
    pub rating: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanAgreement {
    pub n: usize,
    pub a1_mean: f64,
    pub a2_mean: f64,
    pub agreement_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelRatingStats {
    pub n: usize,
    pub rating_mean: f64,
    pub rating_stdev: f64,
}

/// Per language pair translation-quality summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub human: BTreeMap<String, HumanAgreement>,
    pub model: BTreeMap<String, ModelRatingStats>,
    /// Divisor used for the rating standard deviation.
    pub stdev_divisor: String,
}

fn check_binary(records: &[jsonl::Numbered<HumanRatingRecord>], path: &Path) -> Result<(), CorpusError> {
    for r in records {
        for v in [r.value.rater1, r.value.rater2] {
            if v > 1 {
                return Err(CorpusError::RatingRange {
                    path: path.to_path_buf(),
                    line: r.line,
                    value: v as i64,
                    range: "{0, 1}",
                });
            }
        }
    }
    Ok(())
}

pub fn load_human_ratings(path: &Path) -> Result<Vec<HumanRatingRecord>, CorpusError> {
    let records = jsonl::read::<HumanRatingRecord>(path)?;
    check_binary(&records, path)?;
    Ok(records.into_iter().map(|r| r.value).collect())
}

pub fn load_model_ratings(path: &Path) -> Result<Vec<ModelRatingRecord>, CorpusError> {
    let records = jsonl::read::<ModelRatingRecord>(path)?;
    for r in &records {
        if !(1..=5).contains(&r.value.rating) {
            return Err(CorpusError::RatingRange {
                path: path.to_path_buf(),
                line: r.line,
                value: r.value.rating as i64,
                range: "1..=5",
            });
        }
    }
    Ok(records.into_iter().map(|r| r.value).collect())
}

impl HumanAgreement {
    /// Statistics over the records of a single pair.
    pub fn for_pair(records: &[HumanRatingRecord], pair: &str) -> Result<Self, CorpusError> {
        let (mut n, mut r1, mut r2, mut agree) = (0usize, 0usize, 0usize, 0usize);
        for r in records.iter().filter(|r| r.lang_pair == pair) {
            n += 1;
            r1 += r.rater1 as usize;
            r2 += r.rater2 as usize;
            agree += usize::from(r.rater1 == r.rater2);
        }
        if n == 0 {
            return Err(CorpusError::EmptyPair(pair.to_string()));
        }
        let n_f = n as f64;
        Ok(Self {
            n,
            a1_mean: r1 as f64 / n_f,
            a2_mean: r2 as f64 / n_f,
            agreement_pct: 100.0 * agree as f64 / n_f,
        })
    }
}

impl ModelRatingStats {
    /// Mean and population standard deviation (divisor N).
    pub fn for_pair(records: &[ModelRatingRecord], pair: &str) -> Result<Self, CorpusError> {
        let ratings: Vec<f64> = records
            .iter()
            .filter(|r| r.lang_pair == pair)
            .map(|r| r.rating as f64)
            .collect();
        if ratings.is_empty() {
            return Err(CorpusError::EmptyPair(pair.to_string()));
        }
        let n = ratings.len() as f64;
        let mean = ratings.iter().sum::<f64>() / n;
        let var = ratings.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            n: ratings.len(),
            rating_mean: mean,
            rating_stdev: var.sqrt(),
        })
    }
}

fn pairs_of<'a>(it: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut pairs: Vec<String> = it.map(str::to_string).collect();
    pairs.sort();
    pairs.dedup();
    pairs
}

/// Statistics for every pair present in `records`.
pub fn human_agreement_stats(
    records: &[HumanRatingRecord],
) -> Result<BTreeMap<String, HumanAgreement>, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::NoRecords);
    }
    pairs_of(records.iter().map(|r| r.lang_pair.as_str()))
        .into_iter()
        .map(|p| HumanAgreement::for_pair(records, &p).map(|s| (p, s)))
        .collect()
}

pub fn model_rating_stats(
    records: &[ModelRatingRecord],
) -> Result<BTreeMap<String, ModelRatingStats>, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::NoRecords);
    }
    pairs_of(records.iter().map(|r| r.lang_pair.as_str()))
        .into_iter()
        .map(|p| ModelRatingStats::for_pair(records, &p).map(|s| (p, s)))
        .collect()
}

impl QualityReport {
    pub fn compute(
        human: &[HumanRatingRecord],
        model: &[ModelRatingRecord],
    ) -> Result<Self, CorpusError> {
        Ok(Self {
            human: human_agreement_stats(human)?,
            model: model_rating_stats(model)?,
            stdev_divisor: "population (N)".to_string(),
        })
    }

    /// Two plain-text tables in the layout of the published quality tables.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("Translation      A1     A2  Agreement(%)\n");
        for (pair, h) in &self.human {
            out.push_str(&format!(
                "{:<12} {:>6.2} {:>6.2} {:>13.2}\n",
                pair, h.a1_mean, h.a2_mean, h.agreement_pct
            ));
        }
        out.push('\n');
        out.push_str("Lang. Pair   Average Rating  St.Dev\n");
        for (pair, m) in &self.model {
            out.push_str(&format!(
                "{:<12} {:>14.2} {:>7.2}\n",
                pair, m.rating_mean, m.rating_stdev
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn task_line(id: &str, n_assert: usize) -> String {
        let asserts: Vec<String> = (0..n_assert).map(|i| format!("assert f({i}) == {i}")).collect();
        serde_json::json!({
            "id": id,
            "prompt": format!("Write a function for {id}."),
            "solution": "def f(x):\n    return x\n",
            "assertions": asserts,
        })
        .to_string()
    }

    fn load(tasks: &str, translations: &str) -> Result<Corpus, CorpusError> {
        load_corpus_from(
            Cursor::new(tasks.to_string()),
            Path::new("tasks.jsonl"),
            Cursor::new(translations.to_string()),
            Path::new("translations.jsonl"),
        )
    }

    fn all_translations(id: &str) -> String {
        Lang::TRANSLATED
            .iter()
            .map(|l| {
                serde_json::json!({"task_id": id, "lang": l, "text": format!("{id} in {l}")})
                    .to_string()
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn loads_two_tasks() {
        let tasks = format!("{}\n{}\n", task_line("1", 3), task_line("2", 3));
        let c = load(&tasks, "").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.prompt("2", Lang::En), Some("Write a function for 2."));
        assert_eq!(c.prompt("2", Lang::Hi), None);
    }

    #[test]
    fn wrong_assertion_count_is_rejected() {
        let tasks = format!("{}\n{}\n", task_line("1", 3), task_line("2", 2));
        let err = load(&tasks, "").unwrap_err();
        assert!(err.to_string().contains("assertion count"), "{err}");
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let tasks = format!("{}\n{{not json\n", task_line("1", 3));
        let err = load(&tasks, "").unwrap_err();
        assert!(err.to_string().contains("tasks.jsonl:2"), "{err}");
    }

    #[test]
    fn duplicate_prompt_is_rejected() {
        let tasks = task_line("1", 3);
        let tr = format!(
            "{}\n{}",
            all_translations("1"),
            serde_json::json!({"task_id": "1", "lang": "hi", "text": "again"})
        );
        assert!(matches!(load(&tasks, &tr), Err(CorpusError::DuplicatePrompt { .. })));
    }

    #[test]
    fn partial_translations_are_rejected() {
        let tasks = task_line("1", 3);
        let tr = serde_json::json!({"task_id": "1", "lang": "hi", "text": "x"}).to_string();
        assert!(matches!(
            load(&tasks, &tr),
            Err(CorpusError::PartialTranslations { count: 1, .. })
        ));
    }

    #[test]
    fn full_corpus_serves_six_prompts_per_task() {
        let n = 257;
        let tasks: Vec<String> = (0..n).map(|i| task_line(&i.to_string(), 3)).collect();
        let tr: Vec<String> = (0..n).map(|i| all_translations(&i.to_string())).collect();
        let c = load(&tasks.join("\n"), &tr.join("\n")).unwrap();
        assert_eq!(c.len(), 257);
        assert_eq!(c.prompt_count(), 257 * 6);
        for t in c.tasks() {
            for l in Lang::ALL {
                assert!(c.prompt(&t.id, l).is_some());
            }
        }
    }

    fn human(pair: &str, r1: &[u8], r2: &[u8]) -> Vec<HumanRatingRecord> {
        r1.iter()
            .zip(r2)
            .enumerate()
            .map(|(i, (&a, &b))| HumanRatingRecord {
                task_id: i.to_string(),
                lang_pair: pair.into(),
                rater1: a,
                rater2: b,
            })
            .collect()
    }

    #[test]
    fn human_agreement_hand_count() {
        let recs = human("en_zh", &[1, 1, 0, 1], &[1, 0, 0, 1]);
        let s = HumanAgreement::for_pair(&recs, "en_zh").unwrap();
        assert_eq!(s.a1_mean, 0.75);
        assert_eq!(s.a2_mean, 0.5);
        assert_eq!(s.agreement_pct, 75.0);
    }

    #[test]
    fn identical_labels_agree_fully() {
        let recs = human("en_es", &[1, 0, 1], &[1, 0, 1]);
        assert_eq!(HumanAgreement::for_pair(&recs, "en_es").unwrap().agreement_pct, 100.0);
    }

    #[test]
    fn empty_pair_is_an_error() {
        let recs = human("en_es", &[1], &[1]);
        assert!(matches!(
            HumanAgreement::for_pair(&recs, "en_hi"),
            Err(CorpusError::EmptyPair(_))
        ));
        assert!(matches!(human_agreement_stats(&[]), Err(CorpusError::NoRecords)));
    }

    fn model(pair: &str, ratings: &[u8]) -> Vec<ModelRatingRecord> {
        ratings
            .iter()
            .enumerate()
            .map(|(i, &r)| ModelRatingRecord {
                task_id: i.to_string(),
                lang_pair: pair.into(),
                rating: r,
            })
            .collect()
    }

    #[test]
    fn rating_stats_constant_and_hand_case() {
        let s = ModelRatingStats::for_pair(&model("p", &[5, 5, 5]), "p").unwrap();
        assert_eq!((s.rating_mean, s.rating_stdev), (5.0, 0.0));
        let s = ModelRatingStats::for_pair(&model("p", &[5, 4, 5]), "p").unwrap();
        assert!((s.rating_mean - 14.0 / 3.0).abs() < 1e-12);
        // population stdev of {5,4,5}: sqrt(2/9)
        assert!((s.rating_stdev - (2.0f64 / 9.0).sqrt()).abs() < 1e-12);
        assert!((s.rating_mean - 4.6667).abs() < 1e-4);
        assert!((s.rating_stdev - 0.4714).abs() < 1e-4);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn agreement_symmetric_and_permutation_invariant(
                labels in proptest::collection::vec((0u8..2, 0u8..2), 1..60),
                rot in 0usize..60,
            ) {
                let r1: Vec<u8> = labels.iter().map(|l| l.0).collect();
                let r2: Vec<u8> = labels.iter().map(|l| l.1).collect();
                let a = HumanAgreement::for_pair(&human("p", &r1, &r2), "p").unwrap();
                let b = HumanAgreement::for_pair(&human("p", &r2, &r1), "p").unwrap();
                prop_assert_eq!(a.agreement_pct, b.agreement_pct);
                let mut recs = human("p", &r1, &r2);
                let k = rot % recs.len();
                recs.rotate_left(k);
                let c = HumanAgreement::for_pair(&recs, "p").unwrap();
                prop_assert_eq!(a.a1_mean, c.a1_mean);
                prop_assert_eq!(a.a2_mean, c.a2_mean);
                let same = HumanAgreement::for_pair(&human("p", &r1, &r1), "p").unwrap();
                prop_assert_eq!(same.agreement_pct, 100.0);
            }

            #[test]
            fn rating_mean_within_range(ratings in proptest::collection::vec(1u8..=5, 1..100)) {
                let s = ModelRatingStats::for_pair(&model("p", &ratings), "p").unwrap();
                let lo = *ratings.iter().min().unwrap() as f64;
                let hi = *ratings.iter().max().unwrap() as f64;
                prop_assert!(s.rating_mean >= lo - 1e-12 && s.rating_mean <= hi + 1e-12);
                prop_assert!(s.rating_stdev >= 0.0);
            }
        }
    }
}
