//! Answer, path, efficiency and error-class metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decompose::Question;

/// Answer-string normalization applied before any comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Trim surrounding whitespace only.
    #[default]
    Strict,
    /// Case-fold, strip punctuation and collapse whitespace.
    Relaxed,
}

impl Normalization {
    pub fn apply(self, s: &str) -> String {
        match self {
            Self::Strict => s.trim().to_string(),
            Self::Relaxed => s
                .to_lowercase()
                .chars()
                .map(|c| if c.is_alphanumeric() { c } else { ' ' })
                .collect::<String>()
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" "),
        }
    }

    fn set<S: AsRef<str>>(self, items: &[S]) -> BTreeSet<String> {
        items
            .iter()
            .map(|s| self.apply(s.as_ref()))
            .filter(|s| !s.is_empty())
            .collect()
    }
}

/// 1 when the first prediction matches a gold answer.
pub fn hit_at_1<S: AsRef<str>>(predicted: &[S], gold: &[S], norm: Normalization) -> f64 {
    let gold = norm.set(gold);
    match predicted.first() {
        Some(first) if gold.contains(&norm.apply(first.as_ref())) => 1.0,
        _ => 0.0,
    }
}

/// Set F1 between predictions and gold answers; 0 for empty predictions.
pub fn answer_f1<S: AsRef<str>>(predicted: &[S], gold: &[S], norm: Normalization) -> f64 {
    let p = norm.set(predicted);
    let g = norm.set(gold);
    let common = p.intersection(&g).count() as f64;
    if p.is_empty() || g.is_empty() || common == 0.0 {
        return 0.0;
    }
    let precision = common / p.len() as f64;
    let recall = common / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityMetrics {
    pub recall: f64,
    pub hit: f64,
    /// Distinct entities across all paths.
    pub entities: usize,
}

/// `path_entities` holds every entity name found on the retrieved paths.
pub fn entity_metrics<S: AsRef<str>>(path_entities: &[S], gold: &[S], norm: Normalization) -> EntityMetrics {
    let found = norm.set(path_entities);
    let g = norm.set(gold);
    let recall = if g.is_empty() {
        0.0
    } else {
        g.intersection(&found).count() as f64 / g.len() as f64
    };
    EntityMetrics {
        recall,
        hit: if recall > 0.0 { 1.0 } else { 0.0 },
        entities: found.len(),
    }
}

/// Fraction of gold relations used by the paths; `None` without gold.
pub fn overlap_ratio<S: AsRef<str>>(path_relations: &[S], gold_relations: &[S]) -> Option<f64> {
    let g: BTreeSet<&str> = gold_relations.iter().map(|s| s.as_ref()).collect();
    if g.is_empty() {
        return None;
    }
    let p: BTreeSet<&str> = path_relations.iter().map(|s| s.as_ref()).collect();
    Some(g.intersection(&p).count() as f64 / g.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Correct,
    RetrievalError,
    ReasoningError,
}

impl ErrorClass {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Correct => "correct",
            Self::RetrievalError => "retrieval_error",
            Self::ReasoningError => "reasoning_error",
        }
    }
}

/// Correct on a rank-1 hit; otherwise a retrieval error when no gold entity
/// is on any path and a reasoning error when one is.
pub fn classify_error<S: AsRef<str>>(
    predicted: &[S],
    path_entities: &[S],
    gold: &[S],
    norm: Normalization,
) -> ErrorClass {
    if hit_at_1(predicted, gold, norm) == 1.0 {
        ErrorClass::Correct
    } else if entity_metrics(path_entities, gold, norm).hit == 0.0 {
        ErrorClass::RetrievalError
    } else {
        ErrorClass::ReasoningError
    }
}

/// Everything measured for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub id: String,
    pub question: String,
    pub gold: Vec<String>,
    pub predicted: Vec<String>,
    pub unanswerable: bool,
    pub hit: f64,
    pub f1: f64,
    pub entity_recall: f64,
    pub entity_hit: f64,
    pub entities: usize,
    pub overlap: Option<f64>,
    pub error_class: ErrorClass,
    pub calls: u64,
    pub tokens: u64,
    /// Complete reasoning paths before prefix enumeration.
    pub paths: usize,
    /// Prefixes placed in the final context.
    pub context_paths: usize,
    pub fallback_rounds: usize,
    pub refinements: usize,
    /// Backend-reported LLM latency, in seconds.
    pub time: f64,
    /// `stage: message` when the pipeline failed for this question.
    pub failure: Option<String>,
}

/// Raw observations a result is computed from.
#[derive(Debug, Clone, Default)]
pub struct Observation {
    pub predicted: Vec<String>,
    pub unanswerable: bool,
    pub path_entities: Vec<String>,
    pub path_relations: Vec<String>,
    pub calls: u64,
    pub tokens: u64,
    pub paths: usize,
    pub context_paths: usize,
    pub fallback_rounds: usize,
    pub refinements: usize,
    pub time: f64,
    pub failure: Option<String>,
}

impl QuestionResult {
    pub fn compute(question: &Question, obs: Observation, norm: Normalization) -> Self {
        let gold = &question.answers;
        let em = entity_metrics(&obs.path_entities, gold, norm);
        Self {
            id: question.id.clone(),
            question: question.text.clone(),
            gold: gold.clone(),
            hit: hit_at_1(&obs.predicted, gold, norm),
            f1: answer_f1(&obs.predicted, gold, norm),
            entity_recall: em.recall,
            entity_hit: em.hit,
            entities: em.entities,
            overlap: overlap_ratio(&obs.path_relations, &question.gold_relations),
            error_class: classify_error(&obs.predicted, &obs.path_entities, gold, norm),
            predicted: obs.predicted,
            unanswerable: obs.unanswerable,
            calls: obs.calls,
            tokens: obs.tokens,
            paths: obs.paths,
            context_paths: obs.context_paths,
            fallback_rounds: obs.fallback_rounds,
            refinements: obs.refinements,
            time: obs.time,
            failure: obs.failure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummary {
    /// Questions carrying gold relations.
    pub questions: usize,
    pub mean: f64,
    pub full: f64,
    pub none: f64,
    pub histogram: BTreeMap<String, f64>,
}

/// Dataset-level means of the per-question values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub questions: usize,
    pub failures: usize,
    pub normalization: Normalization,
    pub hit_at_1: f64,
    /// Mean of per-question F1.
    pub f1_macro: f64,
    pub entity_recall: f64,
    pub entity_hit: f64,
    pub avg_entities: f64,
    pub overlap: Option<OverlapSummary>,
    pub correct_rate: f64,
    pub retrieval_error_rate: f64,
    pub reasoning_error_rate: f64,
    pub avg_calls: f64,
    pub avg_tokens: f64,
    pub avg_paths: f64,
    pub avg_context_paths: f64,
    pub avg_time: f64,
    pub total_calls: u64,
    pub fallback_rounds: usize,
    pub refinements: usize,
}

fn bucket(r: f64) -> &'static str {
    if r <= 0.0 {
        "0"
    } else if r < 0.5 {
        "(0,0.5)"
    } else if r < 1.0 {
        "[0.5,1)"
    } else {
        "1"
    }
}

impl MetricsReport {
    pub fn aggregate(results: &[QuestionResult], normalization: Normalization) -> Self {
        let n = results.len().max(1) as f64;
        let mean = |f: &dyn Fn(&QuestionResult) -> f64| results.iter().map(f).sum::<f64>() / n;
        let share = |c: ErrorClass| results.iter().filter(|r| r.error_class == c).count() as f64 / n;
        let overlaps: Vec<f64> = results.iter().filter_map(|r| r.overlap).collect();
        let overlap = (!overlaps.is_empty()).then(|| {
            let m = overlaps.len() as f64;
            let mut histogram: BTreeMap<String, f64> = ["0", "(0,0.5)", "[0.5,1)", "1"]
                .iter()
                .map(|b| (b.to_string(), 0.0))
                .collect();
            for &o in &overlaps {
                *histogram.get_mut(bucket(o)).expect("known bucket") += 1.0 / m;
            }
            OverlapSummary {
                questions: overlaps.len(),
                mean: overlaps.iter().sum::<f64>() / m,
                full: overlaps.iter().filter(|o| **o >= 1.0).count() as f64 / m,
                none: overlaps.iter().filter(|o| **o <= 0.0).count() as f64 / m,
                histogram,
            }
        });
        Self {
            questions: results.len(),
            failures: results.iter().filter(|r| r.failure.is_some()).count(),
            normalization,
            hit_at_1: mean(&|r| r.hit),
            f1_macro: mean(&|r| r.f1),
            entity_recall: mean(&|r| r.entity_recall),
            entity_hit: mean(&|r| r.entity_hit),
            avg_entities: mean(&|r| r.entities as f64),
            overlap,
            correct_rate: share(ErrorClass::Correct),
            retrieval_error_rate: share(ErrorClass::RetrievalError),
            reasoning_error_rate: share(ErrorClass::ReasoningError),
            avg_calls: mean(&|r| r.calls as f64),
            avg_tokens: mean(&|r| r.tokens as f64),
            avg_paths: mean(&|r| r.paths as f64),
            avg_context_paths: mean(&|r| r.context_paths as f64),
            avg_time: mean(&|r| r.time),
            total_calls: results.iter().map(|r| r.calls).sum(),
            fallback_rounds: results.iter().map(|r| r.fallback_rounds).sum(),
            refinements: results.iter().map(|r| r.refinements).sum(),
        }
    }

    /// Plain-text summary table.
    pub fn table(&self) -> String {
        let pct = |x: f64| format!("{:.1}", 100.0 * x);
        let mut rows = vec![
            ("questions", self.questions.to_string()),
            ("failures", self.failures.to_string()),
            ("Hit@1", pct(self.hit_at_1)),
            ("F1 (macro)", pct(self.f1_macro)),
            ("entity recall", pct(self.entity_recall)),
            ("entity hit", pct(self.entity_hit)),
            ("avg entities", format!("{:.2}", self.avg_entities)),
        ];
        match &self.overlap {
            Some(o) => {
                rows.push(("overlap mean", pct(o.mean)));
                rows.push(("overlap = 1", pct(o.full)));
                rows.push(("overlap = 0", pct(o.none)));
            }
            None => rows.push(("overlap", "n/a".into())),
        }
        rows.extend([
            ("correct", pct(self.correct_rate)),
            ("retrieval error", pct(self.retrieval_error_rate)),
            ("reasoning error", pct(self.reasoning_error_rate)),
            ("avg #call", format!("{:.2}", self.avg_calls)),
            ("avg #token", format!("{:.1}", self.avg_tokens)),
            ("avg #path", format!("{:.2} ({:.2})", self.avg_context_paths, self.avg_paths)),
            ("avg time (s)", format!("{:.3}", self.avg_time)),
        ]);
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }
}

/// A dataset line that could not be used.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedLine {
    pub line: usize,
    pub message: String,
}

/// Reads JSON-lines questions, skipping blank and malformed lines.
pub fn read_dataset<R: BufRead>(input: R) -> std::io::Result<(Vec<Question>, Vec<SkippedLine>)> {
    let mut questions = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Question>(&line) {
            Ok(q) if q.text.trim().is_empty() => skipped.push(SkippedLine {
                line: i + 1,
                message: "empty question text".into(),
            }),
            Ok(q) => questions.push(q),
            Err(e) => skipped.push(SkippedLine {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    Ok((questions, skipped))
}

pub fn load_dataset(path: &Path) -> std::io::Result<(Vec<Question>, Vec<SkippedLine>)> {
    read_dataset(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Per-question CSV header matching [`QuestionResult::csv_row`].
pub const CSV_HEADER: [&str; 12] = [
    "id", "hit", "f1", "error_class", "calls", "tokens", "paths", "context_paths", "time", "predicted", "unanswerable", "failure",
];

impl QuestionResult {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.id.clone(),
            self.hit.to_string(),
            format!("{:.4}", self.f1),
            self.error_class.as_str().to_string(),
            self.calls.to_string(),
            self.tokens.to_string(),
            self.paths.to_string(),
            self.context_paths.to_string(),
            format!("{:.6}", self.time),
            self.predicted.join("|"),
            self.unanswerable.to_string(),
            self.failure.clone().unwrap_or_default(),
        ]
    }
}
