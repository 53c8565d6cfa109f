//! Classification and topic-quality scores.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Per column `i`, marks the `true_counts[i]` largest entries with 1 (lower
/// row index wins ties) and the rest with 0.
///
/// The counts are the true number of labels of each test document, which the
/// caller must supply explicitly.
pub fn threshold_predictions(scores: &Matrix, true_counts: &[usize]) -> Result<Matrix> {
    let (p, m) = scores.shape();
    if true_counts.len() != m {
        return Err(Error::InvalidInput(format!(
            "{} label counts for {m} columns",
            true_counts.len()
        )));
    }
    let mut out = Matrix::zeros(p, m);
    for (j, &count) in true_counts.iter().enumerate() {
        if count == 0 || count > p {
            return Err(Error::OutOfRange(format!(
                "label count {count} for column {j} (must be in 1..={p})"
            )));
        }
        let mut rows: Vec<usize> = (0..p).collect();
        rows.sort_by(|&a, &b| {
            scores
                .get(b, j)
                .total_cmp(&scores.get(a, j))
                .then(a.cmp(&b))
        });
        for &i in &rows[..count] {
            out.set(i, j, 1.0);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub per_class: Vec<f64>,
}

/// Unweighted mean over rows of 2TP / (2TP + FP + FN), with 0 for a class
/// that is neither present nor predicted.
pub fn macro_f1(pred: &Matrix, truth: &Matrix) -> Result<F1Scores> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape {
            op: "macro_f1",
            left: pred.shape(),
            right: truth.shape(),
        });
    }
    let binary = |m: &Matrix| m.data().iter().all(|&v| v == 0.0 || v == 1.0);
    if !binary(pred) || !binary(truth) {
        return Err(Error::InvalidInput("macro_f1 needs binary matrices".into()));
    }
    let per_class: Vec<f64> = (0..pred.rows())
        .map(|i| {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (&p, &t) in pred.row(i).iter().zip(truth.row(i)) {
                match (p == 1.0, t == 1.0) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                (2 * tp) as f64 / denom as f64
            }
        })
        .collect();
    let macro_f1 = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok(F1Scores {
        macro_f1,
        per_class,
    })
}

/// Document sets keyed by term, for repeated coherence queries.
pub trait DocumentSet {
    fn contains_term(&self, term: &str) -> bool;
}

impl DocumentSet for BTreeSet<String> {
    fn contains_term(&self, term: &str) -> bool {
        self.contains(term)
    }
}

impl DocumentSet for std::collections::HashSet<String> {
    fn contains_term(&self, term: &str) -> bool {
        self.contains(term)
    }
}

/// Topic coherence of an ordered keyword list (descending topic weight):
///
/// ```text
/// C = Σ_{b=2..N} Σ_{ℓ<b} ln((D(w_b, w_ℓ) + 1) / D(w_ℓ))
/// ```
///
/// where D counts documents containing the word (or both words).
pub fn coherence<K: AsRef<str>, D: DocumentSet>(keywords: &[K], docs: &[D]) -> Result<f64> {
    if keywords.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "coherence needs at least 2 keywords, got {}",
            keywords.len()
        )));
    }
    // presence[w][j]: keyword w occurs in document j
    let presence: Vec<Vec<bool>> = keywords
        .iter()
        .map(|k| docs.iter().map(|d| d.contains_term(k.as_ref())).collect())
        .collect();
    let df: Vec<usize> = presence
        .iter()
        .map(|p| p.iter().filter(|&&x| x).count())
        .collect();
    if let Some(pos) = df.iter().position(|&c| c == 0) {
        return Err(Error::InvalidInput(format!(
            "keyword {:?} occurs in no document",
            keywords[pos].as_ref()
        )));
    }
    let mut score = 0.0;
    for b in 1..keywords.len() {
        for l in 0..b {
            let co = presence[b]
                .iter()
                .zip(&presence[l])
                .filter(|(&x, &y)| x && y)
                .count();
            score += ((co + 1) as f64 / df[l] as f64).ln();
        }
    }
    Ok(score)
}

pub fn avg_coherence(per_topic: &[f64]) -> Result<f64> {
    if per_topic.is_empty() {
        return Err(Error::InvalidInput("no topics to average".into()));
    }
    Ok(per_topic.iter().sum::<f64>() / per_topic.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_f1: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_topic_coherence: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub avg_coherence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topics: Option<Vec<Vec<String>>>,
}

impl EvalReport {
    pub fn with_f1(mut self, scores: F1Scores, class_names: Option<Vec<String>>) -> Self {
        self.macro_f1 = Some(scores.macro_f1);
        self.per_class_f1 = Some(scores.per_class);
        self.class_names = class_names;
        self
    }

    pub fn with_coherence(mut self, topics: Vec<Vec<String>>, per_topic: Vec<f64>) -> Result<Self> {
        self.avg_coherence = Some(avg_coherence(&per_topic)?);
        self.per_topic_coherence = Some(per_topic);
        self.topics = Some(topics);
        Ok(self)
    }

    /// Keyword columns per topic, then the coherence row and the average.
    pub fn topic_table(&self, rows_shown: usize) -> String {
        let (Some(topics), Some(scores)) = (&self.topics, &self.per_topic_coherence) else {
            return String::new();
        };
        let width = topics
            .iter()
            .flat_map(|t| t.iter().take(rows_shown).map(String::len))
            .chain([10])
            .max()
            .unwrap_or(10)
            + 2;
        let mut out = String::new();
        for i in 0..topics.len() {
            let _ = write!(out, "{:<width$}", format!("Topic {}", i + 1));
        }
        out.push('\n');
        out.push_str(&"-".repeat(width * topics.len()));
        out.push('\n');
        let depth = topics
            .iter()
            .map(Vec::len)
            .max()
            .unwrap_or(0)
            .min(rows_shown);
        for r in 0..depth {
            for t in topics {
                let _ = write!(
                    out,
                    "{:<width$}",
                    t.get(r).map(String::as_str).unwrap_or("")
                );
            }
            out.push('\n');
        }
        out.push_str(&"-".repeat(width * topics.len()));
        out.push_str("\nCoherence per topic:\n");
        for s in scores {
            let _ = write!(out, "{:<width$}", format!("{s:.3}"));
        }
        out.push('\n');
        if let Some(avg) = self.avg_coherence {
            let _ = writeln!(out, "Averaged coherence: {avg:.3}");
        }
        out
    }
}
