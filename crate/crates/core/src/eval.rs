//! Per-tool precision/recall over labeled query sets.
//!
//! Matching rule: within one example, a predicted tag is a true positive iff
//! an expected tag of the same facet has an equal normalized payload
//! ([`FacetValue::match_key`]); each expected tag is matched at most once.
//! There is no partial credit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use futures::future::BoxFuture;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::domain::{Facet, FacetTag, IntentRoute, MemberProfile, Query};

pub const MATCHING_RULE: &str =
    "exact match: same facet and equal normalized value within an example, no partial credit";

#[derive(Debug, Error)]
pub enum DatasetFormatError {
    #[error("reading dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub route: IntentRoute,
    #[serde(default)]
    pub tags: Vec<FacetTag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub query: Query,
    pub profile: Option<MemberProfile>,
    pub expected: Expected,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    query: String,
    #[serde(default)]
    locale: Option<String>,
    #[serde(default)]
    profile: Option<MemberProfile>,
    expected: Expected,
}

pub fn read_dataset(reader: impl BufRead) -> Result<Vec<LabeledExample>, DatasetFormatError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| DatasetFormatError::Record { line: i + 1, message };
        let r: Record = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let mut query = Query::new(r.query).map_err(|e| bad(e.to_string()))?;
        query.locale = r.locale;
        let chars = query.char_len();
        for tag in &r.expected.tags {
            tag.validate(Some(chars)).map_err(|e| bad(e.to_string()))?;
        }
        out.push(LabeledExample { query, profile: r.profile, expected: r.expected });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub route: IntentRoute,
    pub tags: Vec<FacetTag>,
}

/// Something that can interpret a labeled example's query.
pub trait Understand: Send + Sync {
    fn predict<'a>(&'a self, example: &'a LabeledExample) -> BoxFuture<'a, Prediction>;
}

/// A ratio that may be undefined. Serialized as a number or `"n/a"`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metric(pub Option<f64>);

impl Metric {
    pub fn ratio(num: u64, den: u64) -> Self {
        Metric((den > 0).then(|| num as f64 / den as f64))
    }

    pub fn delta(a: Metric, b: Metric) -> Metric {
        Metric(a.0.zip(b.0).map(|(a, b)| b - a))
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.3}"),
            None => f.write_str("n/a"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("n/a"),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Metric(Some(v))),
            Repr::Text(t) if t == "n/a" => Ok(Metric(None)),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"n/a\", got '{t}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

impl Counts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        Self { true_positives: tp, false_positives: fp, false_negatives: fn_ }
    }

    pub fn add(&mut self, o: Counts) {
        self.true_positives += o.true_positives;
        self.false_positives += o.false_positives;
        self.false_negatives += o.false_negatives;
    }

    pub fn precision(&self) -> Metric {
        Metric::ratio(self.true_positives, self.true_positives + self.false_positives)
    }

    pub fn recall(&self) -> Metric {
        Metric::ratio(self.true_positives, self.true_positives + self.false_negatives)
    }
}

/// Per-facet counts for one example under the exact-match rule.
pub fn match_counts(predicted: &[FacetTag], expected: &[FacetTag]) -> BTreeMap<Facet, Counts> {
    let mut out: BTreeMap<Facet, Counts> = BTreeMap::new();
    let mut pool: Vec<Option<(Facet, String)>> =
        expected.iter().map(|t| Some((t.facet(), t.value.match_key()))).collect();
    for p in predicted {
        let key = (p.facet(), p.value.match_key());
        let c = out.entry(key.0).or_default();
        match pool.iter_mut().find(|e| e.as_ref() == Some(&key)) {
            Some(slot) => {
                *slot = None;
                c.true_positives += 1;
            }
            None => c.false_positives += 1,
        }
    }
    for (facet, _) in pool.into_iter().flatten() {
        out.entry(facet).or_default().false_negatives += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRow {
    pub tool: String,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: Metric,
    pub recall: Metric,
}

impl ToolRow {
    pub fn new(tool: impl Into<String>, counts: Counts) -> Self {
        Self { tool: tool.into(), counts, precision: counts.precision(), recall: counts.recall() }
    }
}

/// Route classification counts. Each example contributes one prediction and
/// one label, so the micro-averaged precision and recall both equal
/// accuracy; they are reported under their own names for clarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerRow {
    pub per_route: BTreeMap<IntentRoute, Counts>,
    pub correct: u64,
    pub total: u64,
    pub micro_precision: Metric,
    pub micro_recall: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub matching_rule: String,
    pub examples: usize,
    /// Sorted by tool name; only tools seen in labels or predictions.
    pub tools: Vec<ToolRow>,
    pub planner: PlannerRow,
}

impl MetricReport {
    pub fn tool(&self, name: &str) -> Option<&ToolRow> {
        self.tools.iter().find(|r| r.tool == name)
    }
}

/// Scores predictions paired with their examples.
pub fn score<'a>(pairs: impl IntoIterator<Item = (&'a LabeledExample, &'a Prediction)>) -> MetricReport {
    let mut per_tool: BTreeMap<&'static str, Counts> = BTreeMap::new();
    let mut per_route: BTreeMap<IntentRoute, Counts> = BTreeMap::new();
    let (mut correct, mut total) = (0u64, 0u64);
    for (ex, pred) in pairs {
        for (facet, c) in match_counts(&pred.tags, &ex.expected.tags) {
            per_tool.entry(facet.tool_name()).or_default().add(c);
        }
        total += 1;
        if pred.route == ex.expected.route {
            correct += 1;
            per_route.entry(pred.route).or_default().true_positives += 1;
        } else {
            per_route.entry(pred.route).or_default().false_positives += 1;
            per_route.entry(ex.expected.route).or_default().false_negatives += 1;
        }
    }
    let micro = Metric::ratio(correct, total);
    MetricReport {
        matching_rule: MATCHING_RULE.to_string(),
        examples: total as usize,
        tools: per_tool.into_iter().map(|(t, c)| ToolRow::new(t, c)).collect(),
        planner: PlannerRow { per_route, correct, total, micro_precision: micro, micro_recall: micro },
    }
}

/// Runs `pipeline` over `dataset` with up to `concurrency` examples in
/// flight and scores the predictions.
pub async fn evaluate(dataset: &[LabeledExample], pipeline: &dyn Understand, concurrency: usize) -> MetricReport {
    let predictions: Vec<Prediction> = stream::iter(dataset)
        .map(|ex| pipeline.predict(ex))
        .buffered(concurrency.max(1))
        .collect()
        .await;
    score(dataset.iter().zip(&predictions))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub tool: String,
    pub precision: Metric,
    pub recall: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// `b - a` for tools present in both reports, by tool name.
    pub deltas: Vec<DeltaRow>,
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
}

pub fn compare(a: &MetricReport, b: &MetricReport) -> Comparison {
    let mut deltas = Vec::new();
    let mut only_in_a = Vec::new();
    for ra in &a.tools {
        match b.tool(&ra.tool) {
            Some(rb) => deltas.push(DeltaRow {
                tool: ra.tool.clone(),
                precision: Metric::delta(ra.precision, rb.precision),
                recall: Metric::delta(ra.recall, rb.recall),
            }),
            None => only_in_a.push(ra.tool.clone()),
        }
    }
    let only_in_b = b.tools.iter().filter(|r| a.tool(&r.tool).is_none()).map(|r| r.tool.clone()).collect();
    deltas.sort_by(|x, y| x.tool.cmp(&y.tool));
    Comparison { deltas, only_in_a, only_in_b }
}

/// Aligned text table, one row per tool plus the planner.
pub fn render_table(report: &MetricReport) -> String {
    let mut rows: Vec<[String; 6]> = vec![[
        "Tool".into(),
        "Precision".into(),
        "Recall".into(),
        "TP".into(),
        "FP".into(),
        "FN".into(),
    ]];
    let p = &report.planner;
    rows.push([
        "query_planner (micro)".into(),
        p.micro_precision.to_string(),
        p.micro_recall.to_string(),
        p.correct.to_string(),
        (p.total - p.correct).to_string(),
        (p.total - p.correct).to_string(),
    ]);
    for r in &report.tools {
        rows.push([
            r.tool.clone(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.counts.true_positives.to_string(),
            r.counts.false_positives.to_string(),
            r.counts.false_negatives.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..6).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = format!("# matching rule: {}\n# examples: {}\n", report.matching_rule, report.examples);
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * 5));
        }
    }
    out
}
