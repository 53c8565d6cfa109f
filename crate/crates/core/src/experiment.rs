//! Evaluation protocols on fitted models and the (rank, λ, μ) grid sweep.
//!
//! Classification: fit on all documents with the test columns masked out of
//! the label term, reconstruct the test labels as C·H restricted to the test
//! columns, keep the top-j entries per column (j = true label count) and score
//! with Macro F1. Topic quality: coherence of the top keywords of each column
//! of W against the corpus document sets.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{coherence, macro_f1, threshold_predictions, EvalReport, F1Scores};
use crate::factorization::{fit, top_keywords, Factors, ModelConfig, Problem};
use crate::linalg::{matmul, Matrix, DEFAULT_EPS};
use crate::supervision::{split_mask, LabelMatrix, MaskMatrix, SeedMatrix};
use crate::textpipe::CorpusMatrix;

/// Macro F1 of the thresholded C·H on the mask's test columns.
pub fn classify(factors: &Factors, labels: &LabelMatrix, mask: &MaskMatrix) -> Result<F1Scores> {
    let c = factors
        .c
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("model was not label-supervised".into()))?;
    if c.rows() != labels.z.rows() {
        return Err(Error::Shape {
            op: "classify (C rows vs label classes)",
            left: c.shape(),
            right: labels.z.shape(),
        });
    }
    if mask.test_ids.is_empty() {
        return Err(Error::InvalidInput("mask has no test columns".into()));
    }
    let h_test = factors.h.select_columns(&mask.test_ids)?;
    let scores = matmul(c, &h_test)?;
    let truth = labels.z.select_columns(&mask.test_ids)?;
    let counts: Vec<usize> = {
        let all = labels.label_counts();
        mask.test_ids.iter().map(|&j| all[j]).collect()
    };
    let pred = threshold_predictions(&scores, &counts)?;
    macro_f1(&pred, &truth)
}

/// Macro F1 of predicting only the most frequent training class for every
/// test document (ties go to the first class in name order).
pub fn majority_baseline(labels: &LabelMatrix, mask: &MaskMatrix) -> Result<F1Scores> {
    let p = labels.z.rows();
    let freq: Vec<f64> = (0..p)
        .map(|i| mask.train_ids.iter().map(|&j| labels.z.get(i, j)).sum())
        .collect();
    let majority = (0..p)
        .max_by(|&a, &b| freq[a].total_cmp(&freq[b]).then(b.cmp(&a)))
        .expect("at least one class");
    let truth = labels.z.select_columns(&mask.test_ids)?;
    let pred = Matrix::from_fn(
        p,
        truth.cols(),
        |i, _| if i == majority { 1.0 } else { 0.0 },
    );
    macro_f1(&pred, &truth)
}

/// Top keywords and coherence for every topic of W.
pub fn topic_report(w: &Matrix, corpus: &CorpusMatrix, n_top: usize) -> Result<EvalReport> {
    let docs = corpus.document_term_sets();
    topic_report_with_docs(w, corpus, &docs, n_top)
}

fn topic_report_with_docs(
    w: &Matrix,
    corpus: &CorpusMatrix,
    docs: &[BTreeSet<String>],
    n_top: usize,
) -> Result<EvalReport> {
    if n_top < 2 {
        return Err(Error::Config(format!(
            "need at least 2 keywords per topic, got {n_top}"
        )));
    }
    let mut topics = Vec::with_capacity(w.cols());
    let mut scores = Vec::with_capacity(w.cols());
    for t in 0..w.cols() {
        let kw = top_keywords(w, &corpus.vocab, t, n_top)?;
        scores.push(coherence(&kw, docs)?);
        topics.push(kw);
    }
    EvalReport::default().with_coherence(topics, scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MacroF1,
    AvgCoherence,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::MacroF1 => "macro_f1",
            Metric::AvgCoherence => "avg_coherence",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub lambda_grid: Vec<f64>,
    pub mu_grid: Vec<f64>,
    pub ranks: Vec<usize>,
    pub trials: usize,
    pub base_rng_seed: u64,
    pub train_fraction: f64,
    pub metric: Metric,
    pub max_iters: usize,
    pub eps: f64,
    pub tol: f64,
    /// Keywords per topic for the coherence metric.
    pub n_top: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            lambda_grid: vec![0.0],
            mu_grid: vec![0.0],
            ranks: vec![8],
            trials: 10,
            base_rng_seed: 0,
            train_fraction: 0.7,
            metric: Metric::MacroF1,
            max_iters: 500,
            eps: DEFAULT_EPS,
            tol: 0.0,
            n_top: 30,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() || self.mu_grid.is_empty() || self.ranks.is_empty() {
            return Err(Error::Config("sweep grids must be non-empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self
            .lambda_grid
            .iter()
            .chain(&self.mu_grid)
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::Config("grid weights must be finite and >= 0".into()));
        }
        if self.ranks.contains(&0) {
            return Err(Error::Config("ranks must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    /// Seed of trial `t`, used both for the split and the initialization.
    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.base_rng_seed.wrapping_add(trial as u64)
    }

    pub fn cell_count(&self) -> usize {
        self.ranks.len() * self.lambda_grid.len() * self.mu_grid.len() * self.trials
    }
}

/// Corpus plus optional supervision shared by every sweep cell.
#[derive(Debug, Clone, Copy)]
pub struct SweepInputs<'a> {
    pub corpus: &'a CorpusMatrix,
    pub labels: Option<&'a LabelMatrix>,
    pub seeds: Option<&'a SeedMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rank: usize,
    pub lambda: f64,
    pub mu: f64,
    pub trial: usize,
    pub value: f64,
}

/// Fits and scores one (rank, λ, μ, trial) cell.
pub fn run_cell(
    inputs: &SweepInputs,
    spec: &SweepSpec,
    rank: usize,
    lambda: f64,
    mu: f64,
    trial: usize,
) -> Result<SweepRow> {
    let docs = match spec.metric {
        Metric::AvgCoherence => Some(inputs.corpus.document_term_sets()),
        Metric::MacroF1 => None,
    };
    run_cell_with_docs(inputs, spec, docs.as_deref(), rank, lambda, mu, trial)
}

fn run_cell_with_docs(
    inputs: &SweepInputs,
    spec: &SweepSpec,
    docs: Option<&[BTreeSet<String>]>,
    rank: usize,
    lambda: f64,
    mu: f64,
    trial: usize,
) -> Result<SweepRow> {
    let seed = spec.trial_seed(trial);
    let x = &inputs.corpus.x;
    let mut problem = Problem::new(x);
    if let Some(s) = inputs.seeds {
        problem = problem.with_seeds(&s.y);
    }
    let mask = match inputs.labels {
        Some(lab) => Some(split_mask(
            lab.z.rows(),
            x.cols(),
            spec.train_fraction,
            seed,
        )?),
        None => None,
    };
    if let (Some(lab), Some(m)) = (inputs.labels, &mask) {
        problem = problem.with_labels(&lab.z, &m.l);
    }
    let config = ModelConfig {
        rank,
        lambda,
        mu,
        max_iters: spec.max_iters,
        rng_seed: seed,
        eps: spec.eps,
        tol: spec.tol,
    };
    let result = fit(&problem, &config)?;
    let value = match spec.metric {
        Metric::MacroF1 => {
            let lab = inputs
                .labels
                .ok_or_else(|| Error::Config("macro_f1 sweeps need labels".into()))?;
            classify(
                &result.factors,
                lab,
                mask.as_ref().expect("mask built with labels"),
            )?
            .macro_f1
        }
        Metric::AvgCoherence => {
            let docs = docs.expect("document sets prepared for coherence");
            let report =
                topic_report_with_docs(&result.factors.w, inputs.corpus, docs, spec.n_top)?;
            report.avg_coherence.expect("coherence report")
        }
    };
    Ok(SweepRow {
        rank,
        lambda,
        mu,
        trial,
        value,
    })
}

/// Runs every cell and trial in parallel. Rows come back sorted by
/// (rank, λ, μ, trial) whatever the scheduling.
pub fn run_sweep(inputs: &SweepInputs, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    if spec.metric == Metric::MacroF1 && inputs.labels.is_none() {
        return Err(Error::Config("macro_f1 sweeps need labels".into()));
    }
    if inputs.seeds.is_none() && spec.lambda_grid.iter().any(|&l| l > 0.0) {
        return Err(Error::Config(
            "lambda > 0 in the grid requires seed words".into(),
        ));
    }
    if inputs.labels.is_none() && spec.mu_grid.iter().any(|&m| m > 0.0) {
        return Err(Error::Config("mu > 0 in the grid requires labels".into()));
    }
    let docs = match spec.metric {
        Metric::AvgCoherence => Some(inputs.corpus.document_term_sets()),
        Metric::MacroF1 => None,
    };

    let mut jobs = Vec::with_capacity(spec.cell_count());
    for &rank in &spec.ranks {
        for &lambda in &spec.lambda_grid {
            for &mu in &spec.mu_grid {
                for trial in 0..spec.trials {
                    jobs.push((rank, lambda, mu, trial));
                }
            }
        }
    }
    let mut rows = jobs
        .into_par_iter()
        .map(|(rank, lambda, mu, trial)| {
            run_cell_with_docs(inputs, spec, docs.as_deref(), rank, lambda, mu, trial).map_err(
                |e| {
                    Error::InvalidInput(format!(
                        "sweep cell rank={rank} lambda={lambda} mu={mu} trial={trial}: {e}"
                    ))
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| row_key_cmp(a, b).then(a.trial.cmp(&b.trial)));
    Ok(rows)
}

fn row_key_cmp(a: &SweepRow, b: &SweepRow) -> Ordering {
    a.rank
        .cmp(&b.rank)
        .then(a.lambda.total_cmp(&b.lambda))
        .then(a.mu.total_cmp(&b.mu))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub rank: usize,
    pub lambda: f64,
    pub mu: f64,
    pub trials: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean and (population) standard deviation over trials for each cell.
pub fn aggregate(rows: &[SweepRow]) -> Vec<CellMean> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| row_key_cmp(a, b).then(a.trial.cmp(&b.trial)));
    let mut out: Vec<CellMean> = Vec::new();
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && row_key_cmp(sorted[start], sorted[end]) == Ordering::Equal {
            end += 1;
        }
        let vals: Vec<f64> = sorted[start..end].iter().map(|r| r.value).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        out.push(CellMean {
            rank: sorted[start].rank,
            lambda: sorted[start].lambda,
            mu: sorted[start].mu,
            trials: vals.len(),
            mean,
            std: var.sqrt(),
        });
        start = end;
    }
    out
}

/// Per (rank, λ): the μ = 0 mean when that cell exists, and the best μ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestMu {
    pub rank: usize,
    pub lambda: f64,
    pub unsupervised_mean: Option<f64>,
    pub best_mu: f64,
    pub best_mean: f64,
}

pub fn best_mu_per_lambda(means: &[CellMean]) -> Vec<BestMu> {
    let mut out: Vec<BestMu> = Vec::new();
    for m in means {
        let same = out
            .last_mut()
            .filter(|b| b.rank == m.rank && b.lambda.total_cmp(&m.lambda) == Ordering::Equal);
        match same {
            Some(b) => {
                if m.mu == 0.0 {
                    b.unsupervised_mean = Some(m.mean);
                }
                if m.mean > b.best_mean {
                    b.best_mu = m.mu;
                    b.best_mean = m.mean;
                }
            }
            None => out.push(BestMu {
                rank: m.rank,
                lambda: m.lambda,
                unsupervised_mean: (m.mu == 0.0).then_some(m.mean),
                best_mu: m.mu,
                best_mean: m.mean,
            }),
        }
    }
    out
}

pub fn rows_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("rank,lambda,mu,trial,metric_value\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.rank, r.lambda, r.mu, r.trial, r.value
        );
    }
    out
}

pub fn means_csv(means: &[CellMean]) -> String {
    let mut out = String::from("rank,lambda,mu,trials,mean,std\n");
    for m in means {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            m.rank, m.lambda, m.mu, m.trials, m.mean, m.std
        );
    }
    out
}

pub fn best_mu_csv(best: &[BestMu]) -> String {
    let mut out = String::from("rank,lambda,mu0_mean,best_mu,best_mean\n");
    for b in best {
        let base = b
            .unsupervised_mean
            .map(|v| v.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            b.rank, b.lambda, base, b.best_mu, b.best_mean
        );
    }
    out
}

/// Parses the output of [`means_csv`].
pub fn parse_means_csv(text: &str) -> Result<Vec<CellMean>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| Error::InvalidInput(format!("means csv line {}: bad {what}", i + 1));
        if f.len() != 6 {
            return Err(bad("field count"));
        }
        out.push(CellMean {
            rank: f[0].parse().map_err(|_| bad("rank"))?,
            lambda: f[1].parse().map_err(|_| bad("lambda"))?,
            mu: f[2].parse().map_err(|_| bad("mu"))?,
            trials: f[3].parse().map_err(|_| bad("trials"))?,
            mean: f[4].parse().map_err(|_| bad("mean"))?,
            std: f[5].parse().map_err(|_| bad("std"))?,
        });
    }
    Ok(out)
}

/// SVG heatmap of the mean grid for one rank: λ along x, μ along y, colour
/// linear between the grid minimum (light) and maximum (dark).
pub fn heatmap_svg(means: &[CellMean], rank: usize, title: &str) -> Result<String> {
    let cells: Vec<&CellMean> = means.iter().filter(|m| m.rank == rank).collect();
    if cells.is_empty() {
        return Err(Error::InvalidInput(format!("no cells for rank {rank}")));
    }
    let mut lambdas: Vec<f64> = cells.iter().map(|c| c.lambda).collect();
    let mut mus: Vec<f64> = cells.iter().map(|c| c.mu).collect();
    for v in [&mut lambdas, &mut mus] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let lo = cells.iter().map(|c| c.mean).fold(f64::INFINITY, f64::min);
    let hi = cells
        .iter()
        .map(|c| c.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let (cell, margin_l, margin_t) = (56.0, 80.0, 40.0);
    let width = margin_l + cell * lambdas.len() as f64 + 20.0;
    let height = margin_t + cell * mus.len() as f64 + 50.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{margin_l}" y="20" font-size="13">{}</text>"#,
        xml_escape(title)
    );
    for c in &cells {
        let xi = lambdas
            .iter()
            .position(|&l| l == c.lambda)
            .expect("lambda collected");
        // largest mu at the top
        let yi = mus.len() - 1 - mus.iter().position(|&m| m == c.mu).expect("mu collected");
        let t = if hi > lo {
            (c.mean - lo) / (hi - lo)
        } else {
            0.5
        };
        let shade = (235.0 - 190.0 * t).round() as u8;
        let (x, y) = (margin_l + cell * xi as f64, margin_t + cell * yi as f64);
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="white"/>"#
        );
        let ink = if t > 0.6 { "white" } else { "black" };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{:.4}</text>"#,
            x + cell / 2.0,
            y + cell / 2.0 + 3.0,
            c.mean
        );
    }
    for (i, l) in lambdas.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{l}</text>"#,
            margin_l + cell * (i as f64 + 0.5),
            margin_t + cell * mus.len() as f64 + 14.0
        );
    }
    for (i, m) in mus.iter().rev().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{m}</text>"#,
            margin_l - 6.0,
            margin_t + cell * (i as f64 + 0.5) + 3.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">lambda</text>"#,
        margin_l + cell * lambdas.len() as f64 / 2.0,
        margin_t + cell * mus.len() as f64 + 34.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="12" y="{}">mu</text>"#,
        margin_t + cell * mus.len() as f64 / 2.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
