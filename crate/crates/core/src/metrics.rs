//! Error-rate metrics over classified outcomes and English-gap reports.
//!
//! All rates are kept as exact count ratios; rounding to two decimals
//! (half away from zero) happens only when rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::codeexec::{Mode, OutcomeClass, OutcomeRecord};
use crate::Lang;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty cell: no outcomes to tally")]
    EmptyCell,
    #[error("outcomes span several cells: ({0}) and ({1})")]
    MixedCells(String, String),
    #[error("inconsistent tally: {syntax} + {logical} + {passed} != {total} or {complete} > {total}")]
    InconsistentTally {
        total: u64,
        syntax: u64,
        logical: u64,
        passed: u64,
        complete: u64,
    },
    #[error("no English row for model `{model}`, mode {mode}")]
    MissingEnglish { model: String, mode: Mode },
    #[error("duplicate row for ({model}, {lang}, {mode})")]
    DuplicateRow { model: String, lang: Lang, mode: Mode },
    #[error("unknown report format `{0}` (expected table, csv or json)")]
    UnknownFormat(String),
    #[error("no rows to report")]
    NoRows,
}

/// Exact percentage `100 * num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pct {
    num: i128,
    den: i128,
}

impl Pct {
    pub fn new(num: i128, den: i128) -> Self {
        assert!(den > 0, "percentage denominator must be positive");
        Self { num, den }
    }

    pub fn of(count: u64, total: u64) -> Self {
        Self::new(count as i128, total as i128)
    }

    pub fn value(self) -> f64 {
        100.0 * self.num as f64 / self.den as f64
    }

    /// Rounded to hundredths of a percentage point, half away from zero.
    pub fn hundredths(self) -> i128 {
        let scaled = self.num.abs() * 10_000;
        let r = (2 * scaled + self.den) / (2 * self.den);
        if self.num < 0 {
            -r
        } else {
            r
        }
    }

    pub fn rounded(self) -> f64 {
        self.hundredths() as f64 / 100.0
    }

    pub fn display(self) -> String {
        format_hundredths(self.hundredths())
    }

    pub fn minus(self, other: Pct) -> Pct {
        Pct::new(
            self.num * other.den - other.num * self.den,
            self.den * other.den,
        )
    }
}

fn format_hundredths(h: i128) -> String {
    let sign = if h < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", h.abs() / 100, h.abs() % 100)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeTally {
    pub n_total: u64,
    pub n_syntax: u64,
    pub n_logical: u64,
    pub n_all_passed: u64,
    pub n_complete: u64,
}

impl OutcomeTally {
    pub fn new(
        n_total: u64,
        n_syntax: u64,
        n_logical: u64,
        n_all_passed: u64,
        n_complete: u64,
    ) -> Result<Self, MetricsError> {
        let t = Self {
            n_total,
            n_syntax,
            n_logical,
            n_all_passed,
            n_complete,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.n_syntax + self.n_logical + self.n_all_passed != self.n_total
            || self.n_complete > self.n_total
        {
            return Err(MetricsError::InconsistentTally {
                total: self.n_total,
                syntax: self.n_syntax,
                logical: self.n_logical,
                passed: self.n_all_passed,
                complete: self.n_complete,
            });
        }
        Ok(())
    }

    pub fn add(&mut self, class: OutcomeClass, complete: bool) {
        self.n_total += 1;
        match class {
            OutcomeClass::SyntaxError => self.n_syntax += 1,
            OutcomeClass::LogicalFailure => self.n_logical += 1,
            OutcomeClass::AllPassed => self.n_all_passed += 1,
        }
        self.n_complete += u64::from(complete);
    }
}

/// Count outcomes of a single (lang, mode) cell.
pub fn tally<'a>(
    outcomes: impl IntoIterator<Item = &'a OutcomeRecord>,
) -> Result<OutcomeTally, MetricsError> {
    let mut t = OutcomeTally::default();
    let mut cell: Option<(Lang, Mode)> = None;
    for o in outcomes {
        match cell {
            None => cell = Some((o.lang, o.mode)),
            Some(c) if c != (o.lang, o.mode) => {
                return Err(MetricsError::MixedCells(
                    format!("{}, {}", c.0, c.1),
                    format!("{}, {}", o.lang, o.mode),
                ))
            }
            Some(_) => {}
        }
        t.add(o.class, o.complete);
    }
    if t.n_total == 0 {
        return Err(MetricsError::EmptyCell);
    }
    Ok(t)
}

/// The reported metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TotalEr,
    Ler,
    Ser,
    Atpr,
    Ccr,
}

impl Metric {
    /// Column order of every rendered report.
    pub const ALL: [Metric; 5] = [
        Metric::TotalEr,
        Metric::Ler,
        Metric::Ser,
        Metric::Atpr,
        Metric::Ccr,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::TotalEr => "TotalER",
            Metric::Ler => "LER",
            Metric::Ser => "SER",
            Metric::Atpr => "ATPR",
            Metric::Ccr => "CCR",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Metric::TotalEr => "total_er",
            Metric::Ler => "ler",
            Metric::Ser => "ser",
            Metric::Atpr => "atpr",
            Metric::Ccr => "ccr",
        }
    }
}

/// Rates for one (model, lang, mode) cell; percentages are unrounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub lang: Lang,
    pub mode: Mode,
    pub tally: OutcomeTally,
    pub ler_pct: f64,
    pub ser_pct: f64,
    pub total_er_pct: f64,
    pub atpr_pct: f64,
    pub ccr_pct: f64,
}

impl MetricsRow {
    pub fn pct(&self, metric: Metric) -> Pct {
        let t = &self.tally;
        let count = match metric {
            Metric::TotalEr => t.n_syntax + t.n_logical,
            Metric::Ler => t.n_logical,
            Metric::Ser => t.n_syntax,
            Metric::Atpr => t.n_all_passed,
            Metric::Ccr => t.n_complete,
        };
        Pct::of(count, t.n_total)
    }

    fn cell_key(&self) -> (String, Lang, Mode) {
        (self.model.clone(), self.lang, self.mode)
    }
}

/// LER, SER, TotalER, ATPR and CCR of a tally.
pub fn compute_rates(
    model: &str,
    lang: Lang,
    mode: Mode,
    tally: OutcomeTally,
) -> Result<MetricsRow, MetricsError> {
    if tally.n_total == 0 {
        return Err(MetricsError::EmptyCell);
    }
    tally.validate()?;
    let mut row = MetricsRow {
        model: model.to_string(),
        lang,
        mode,
        tally,
        ler_pct: 0.0,
        ser_pct: 0.0,
        total_er_pct: 0.0,
        atpr_pct: 0.0,
        ccr_pct: 0.0,
    };
    row.ler_pct = row.pct(Metric::Ler).value();
    row.ser_pct = row.pct(Metric::Ser).value();
    row.total_er_pct = row.pct(Metric::TotalEr).value();
    row.atpr_pct = row.pct(Metric::Atpr).value();
    row.ccr_pct = row.pct(Metric::Ccr).value();
    Ok(row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub model: String,
    pub mode: Mode,
    pub metric: Metric,
    pub lang: Lang,
    /// value(lang) - value(en), percentage points.
    pub deviation: f64,
    #[serde(skip)]
    exact: Option<Pct>,
}

impl GapEntry {
    pub fn display(&self) -> String {
        match self.exact {
            Some(p) => p.display(),
            None => format!("{:.2}", self.deviation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub model: String,
    pub mode: Mode,
    pub metric: Metric,
    /// Mean |deviation| over the non-English languages present.
    pub mean_abs_deviation: f64,
    /// Mode whose English row served as the reference.
    pub reference_mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GapReport {
    pub entries: Vec<GapEntry>,
    pub summaries: Vec<GapSummary>,
}

impl GapReport {
    pub fn deviation(&self, model: &str, mode: Mode, metric: Metric, lang: Lang) -> Option<f64> {
        if lang == Lang::En {
            return Some(0.0);
        }
        self.entries
            .iter()
            .find(|e| e.model == model && e.mode == mode && e.metric == metric && e.lang == lang)
            .map(|e| e.deviation)
    }

    pub fn summary(&self, model: &str, mode: Mode, metric: Metric) -> Option<&GapSummary> {
        self.summaries
            .iter()
            .find(|s| s.model == model && s.mode == mode && s.metric == metric)
    }
}

fn index_rows(rows: &[MetricsRow]) -> Result<BTreeMap<(String, Lang, Mode), &MetricsRow>, MetricsError> {
    let mut map = BTreeMap::new();
    for r in rows {
        if map.insert(r.cell_key(), r).is_some() {
            return Err(MetricsError::DuplicateRow {
                model: r.model.clone(),
                lang: r.lang,
                mode: r.mode,
            });
        }
    }
    Ok(map)
}

/// Per-metric deviations of every language from English.
///
/// The English reference of a (model, mode) group is its own `en` row. CoT
/// has no English row by construction, so CoT groups fall back to the
/// model's `orig`/`en` row.
pub fn gap_vs_english(rows: &[MetricsRow]) -> Result<GapReport, MetricsError> {
    let index = index_rows(rows)?;
    let groups: BTreeSet<(String, Mode)> = rows.iter().map(|r| (r.model.clone(), r.mode)).collect();
    let mut report = GapReport::default();
    for (model, mode) in groups {
        let reference = index
            .get(&(model.clone(), Lang::En, mode))
            .map(|r| (*r, mode))
            .or_else(|| {
                (mode == Mode::Cot)
                    .then(|| index.get(&(model.clone(), Lang::En, Mode::Orig)).map(|r| (*r, Mode::Orig)))
                    .flatten()
            });
        let Some((en, reference_mode)) = reference else {
            return Err(MetricsError::MissingEnglish { model, mode });
        };
        for metric in Metric::ALL {
            let mut abs_sum = 0.0;
            let mut n = 0usize;
            for lang in Lang::TRANSLATED {
                let Some(row) = index.get(&(model.clone(), lang, mode)) else {
                    continue;
                };
                let exact = row.pct(metric).minus(en.pct(metric));
                let deviation = exact.value();
                abs_sum += deviation.abs();
                n += 1;
                report.entries.push(GapEntry {
                    model: model.clone(),
                    mode,
                    metric,
                    lang,
                    deviation,
                    exact: Some(exact),
                });
            }
            report.summaries.push(GapSummary {
                model: model.clone(),
                mode,
                metric,
                mean_abs_deviation: if n == 0 { 0.0 } else { abs_sum / n as f64 },
                reference_mode,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(MetricsError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Serialize)]
struct JsonRow<'a> {
    model: &'a str,
    lang: Lang,
    mode: Mode,
    n_total: u64,
    total_er: f64,
    ler: f64,
    ser: f64,
    atpr: f64,
    ccr: f64,
}

#[derive(Serialize)]
struct JsonGap<'a> {
    model: &'a str,
    mode: Mode,
    metric: Metric,
    reference_mode: Mode,
    mean_abs_deviation: f64,
    deviations: BTreeMap<&'static str, f64>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    rows: Vec<JsonRow<'a>>,
    gaps: Vec<JsonGap<'a>>,
}

fn round2(x: f64) -> f64 {
    let r = (x.abs() * 100.0 + 0.5).floor() / 100.0;
    if x < 0.0 {
        -r
    } else {
        r
    }
}

/// Render rows (and optional gaps) deterministically.
pub fn render_report(
    rows: &[MetricsRow],
    gaps: Option<&GapReport>,
    format: ReportFormat,
) -> Result<String, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::NoRows);
    }
    let index = index_rows(rows)?;
    let sorted: Vec<&MetricsRow> = index.values().copied().collect();
    Ok(match format {
        ReportFormat::Csv => render_csv(&sorted, gaps),
        ReportFormat::Json => render_json(&sorted, gaps),
        ReportFormat::Table => render_table(&sorted, gaps),
    })
}

fn render_csv(rows: &[&MetricsRow], gaps: Option<&GapReport>) -> String {
    let mut out = String::from("model,lang,mode,n_total,total_er,ler,ser,atpr,ccr\n");
    for r in rows {
        let _ = write!(out, "{},{},{},{}", csv_field(&r.model), r.lang, r.mode, r.tally.n_total);
        for m in Metric::ALL {
            let _ = write!(out, ",{}", r.pct(m).display());
        }
        out.push('\n');
    }
    if let Some(g) = gaps.filter(|g| !g.entries.is_empty()) {
        out.push('\n');
        out.push_str("model,mode,metric,reference_mode,mean_abs_deviation");
        for l in Lang::TRANSLATED {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for s in &g.summaries {
            let _ = write!(
                out,
                "{},{},{},{},{:.2}",
                csv_field(&s.model),
                s.mode,
                s.metric.key(),
                s.reference_mode,
                round2(s.mean_abs_deviation)
            );
            for l in Lang::TRANSLATED {
                out.push(',');
                if let Some(e) = g.entries.iter().find(|e| {
                    e.model == s.model && e.mode == s.mode && e.metric == s.metric && e.lang == l
                }) {
                    out.push_str(&e.display());
                }
            }
            out.push('\n');
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_json(rows: &[&MetricsRow], gaps: Option<&GapReport>) -> String {
    let rows_out = rows
        .iter()
        .map(|r| JsonRow {
            model: &r.model,
            lang: r.lang,
            mode: r.mode,
            n_total: r.tally.n_total,
            total_er: r.pct(Metric::TotalEr).rounded(),
            ler: r.pct(Metric::Ler).rounded(),
            ser: r.pct(Metric::Ser).rounded(),
            atpr: r.pct(Metric::Atpr).rounded(),
            ccr: r.pct(Metric::Ccr).rounded(),
        })
        .collect();
    let gaps_out = gaps
        .map(|g| {
            g.summaries
                .iter()
                .map(|s| JsonGap {
                    model: &s.model,
                    mode: s.mode,
                    metric: s.metric,
                    reference_mode: s.reference_mode,
                    mean_abs_deviation: round2(s.mean_abs_deviation),
                    deviations: g
                        .entries
                        .iter()
                        .filter(|e| e.model == s.model && e.mode == s.mode && e.metric == s.metric)
                        .map(|e| {
                            let v = e.exact.map(Pct::rounded).unwrap_or_else(|| round2(e.deviation));
                            (e.lang.code(), v)
                        })
                        .collect(),
                })
                .collect()
        })
        .unwrap_or_default();
    let mut s = serde_json::to_string_pretty(&JsonReport {
        rows: rows_out,
        gaps: gaps_out,
    })
    .expect("report serializes");
    s.push('\n');
    s
}

fn render_table(rows: &[&MetricsRow], gaps: Option<&GapReport>) -> String {
    let modes: Vec<Mode> = Mode::ALL
        .into_iter()
        .filter(|m| rows.iter().any(|r| r.mode == *m))
        .collect();
    let lookup: BTreeMap<(&str, Lang, Mode), &MetricsRow> = rows
        .iter()
        .map(|r| ((r.model.as_str(), r.lang, r.mode), *r))
        .collect();
    let models: Vec<&str> = rows
        .iter()
        .map(|r| r.model.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let model_w = models.iter().map(|m| m.chars().count()).max().unwrap_or(3).max(3);
    const CELL: usize = 7;
    let group_w = modes.len() * CELL;

    let mut out = String::new();
    let _ = write!(out, "{:<model_w$} {:<4}", "LLM", "Lang");
    for m in Metric::ALL {
        let _ = write!(out, " | {:^group_w$}", m.label());
    }
    out.push('\n');
    let _ = write!(out, "{:<model_w$} {:<4}", "", "");
    for _ in Metric::ALL {
        out.push_str(" | ");
        for mode in &modes {
            let _ = write!(out, "{:>CELL$}", mode.label());
        }
    }
    out.push('\n');
    let width = out.lines().last().map(|l| l.chars().count()).unwrap_or(0);
    let rule = "-".repeat(width);
    out.push_str(&rule);
    out.push('\n');
    for model in &models {
        let mut first = true;
        for lang in Lang::ALL {
            if !modes.iter().any(|m| lookup.contains_key(&(*model, lang, *m))) {
                continue;
            }
            let name = if first { *model } else { "" };
            first = false;
            let _ = write!(out, "{:<model_w$} {:<4}", name, lang.code());
            for metric in Metric::ALL {
                out.push_str(" | ");
                for mode in &modes {
                    let cell = lookup
                        .get(&(*model, lang, *mode))
                        .map(|r| r.pct(metric).display())
                        .unwrap_or_else(|| "-".to_string());
                    let _ = write!(out, "{cell:>CELL$}");
                }
            }
            out.push('\n');
        }
        out.push_str(&rule);
        out.push('\n');
    }

    if let Some(g) = gaps.filter(|g| !g.summaries.is_empty()) {
        out.push_str("\nDeviation from English (percentage points)\n");
        let _ = write!(out, "{:<model_w$} {:<5} {:<8} {:>7}", "LLM", "Mode", "Metric", "MAD");
        for l in Lang::TRANSLATED {
            let _ = write!(out, " {:>7}", l.code());
        }
        out.push('\n');
        for s in &g.summaries {
            let _ = write!(
                out,
                "{:<model_w$} {:<5} {:<8} {:>7.2}",
                s.model,
                s.mode.label(),
                s.metric.label(),
                round2(s.mean_abs_deviation)
            );
            for l in Lang::TRANSLATED {
                let cell = g
                    .entries
                    .iter()
                    .find(|e| e.model == s.model && e.mode == s.mode && e.metric == s.metric && e.lang == l)
                    .map(GapEntry::display)
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, " {cell:>7}");
            }
            out.push('\n');
        }
    }
    out
}
