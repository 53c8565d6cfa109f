//! Raw text to a terms × documents tf-idf matrix.
//!
//! Pipeline per document: tokenize, drop stopwords (on the raw token), Porter
//! stem. Across the corpus: document-frequency filtering, a `max_features` cap
//! on total counts, smoothed-idf weighting and unit-norm document columns.

mod stem;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};
use crate::linalg::{parse_csv_rows, write_csv_row, Matrix};

pub use stem::stem;

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

/// Lowercase alphabetic tokens. Splits on anything that is not alphanumeric
/// and drops every token that contains a digit.
pub fn tokenize(raw: &str) -> Vec<String> {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && t.chars().all(char::is_alphabetic))
        .map(str::to_lowercase)
        .collect()
}

/// Parses a stopword list: one token per line, `#` starts a comment.
pub fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn default_stopwords() -> BTreeSet<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub max_df: f64,
    pub min_df: f64,
    pub max_features: usize,
    pub stopwords: BTreeSet<String>,
}

impl Default for PipelineParams {
    /// max_df 0.8, min_df 0.04, 700 features, bundled English stopwords.
    fn default() -> Self {
        PipelineParams {
            max_df: 0.8,
            min_df: 0.04,
            max_features: 700,
            stopwords: default_stopwords(),
        }
    }
}

impl PipelineParams {
    /// No df filtering, no feature cap, no stopwords.
    pub fn unfiltered() -> Self {
        PipelineParams {
            max_df: 1.0,
            min_df: f64::MIN_POSITIVE,
            max_features: usize::MAX,
            stopwords: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if !in_unit(self.max_df) || !in_unit(self.min_df) {
            return Err(Error::Config(format!(
                "max_df and min_df must lie in (0, 1], got {} and {}",
                self.max_df, self.min_df
            )));
        }
        if self.min_df > self.max_df {
            return Err(Error::Config(format!(
                "min_df {} exceeds max_df {}",
                self.min_df, self.max_df
            )));
        }
        if self.max_features == 0 {
            return Err(Error::Config("max_features must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(terms: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(terms.len());
        for (i, t) in terms.iter().enumerate() {
            if t.is_empty() || !t.chars().all(|c| c.is_alphabetic() && !c.is_uppercase()) {
                return Err(Error::InvalidInput(format!(
                    "invalid vocabulary term {t:?}"
                )));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate vocabulary term {t:?}"
                )));
            }
        }
        Ok(Vocabulary { terms, index })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusMatrix {
    /// d × n, terms by documents.
    pub x: Matrix,
    pub vocab: Vocabulary,
    pub doc_ids: Vec<String>,
    pub params: PipelineParams,
}

impl CorpusMatrix {
    pub fn n_docs(&self) -> usize {
        self.x.cols()
    }

    pub fn n_terms(&self) -> usize {
        self.x.rows()
    }

    /// Fraction of nonzero entries of X.
    pub fn density(&self) -> f64 {
        let nnz = self.x.data().iter().filter(|&&v| v != 0.0).count();
        nnz as f64 / self.x.data().len() as f64
    }

    /// The set of vocabulary terms present in each document. Every tf-idf
    /// weight is positive exactly when the raw count is, so this is the
    /// preprocessed token set restricted to the vocabulary.
    pub fn document_term_sets(&self) -> Vec<BTreeSet<String>> {
        (0..self.n_docs())
            .map(|j| {
                (0..self.n_terms())
                    .filter(|&t| self.x.get(t, j) > 0.0)
                    .map(|t| self.vocab.term(t).to_string())
                    .collect()
            })
            .collect()
    }

    pub fn doc_index(&self) -> HashMap<&str, usize> {
        self.doc_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.as_str(), i))
            .collect()
    }
}

/// Stopword-filtered, stemmed tokens of one document.
pub fn preprocess(raw: &str, stopwords: &BTreeSet<String>) -> Vec<String> {
    tokenize(raw)
        .into_iter()
        .filter(|t| !stopwords.contains(t))
        .map(|t| stem(&t))
        .collect()
}

pub fn build_corpus(docs: &[(String, String)], params: &PipelineParams) -> Result<CorpusMatrix> {
    params.validate()?;
    if docs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 documents, got {}",
            docs.len()
        )));
    }
    let n = docs.len();

    let counts: Vec<BTreeMap<String, usize>> = docs
        .par_iter()
        .map(|(_, text)| {
            let mut c = BTreeMap::new();
            for tok in preprocess(text, &params.stopwords) {
                *c.entry(tok).or_insert(0) += 1;
            }
            c
        })
        .collect();

    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &counts {
        for (term, &c) in doc {
            *df.entry(term).or_insert(0) += 1;
            *total.entry(term).or_insert(0) += c;
        }
    }

    let upper = params.max_df * n as f64;
    let lower = params.min_df * n as f64;
    let mut kept: Vec<&str> = df
        .iter()
        .filter(|&(_, &f)| !(f as f64 > upper || (f as f64) < lower))
        .map(|(&t, _)| t)
        .collect();
    if kept.len() > params.max_features {
        // highest total count first, lexicographic among equals
        kept.sort_by(|a, b| total[b].cmp(&total[a]).then_with(|| a.cmp(b)));
        kept.truncate(params.max_features);
        kept.sort_unstable();
    }
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary);
    }

    let idf: Vec<f64> = kept
        .iter()
        .map(|t| ((1.0 + n as f64) / (1.0 + df[t] as f64)).ln() + 1.0)
        .collect();
    let d = kept.len();
    let mut x = Matrix::zeros(d, n);
    for (j, doc) in counts.iter().enumerate() {
        let column: Vec<f64> = kept
            .iter()
            .zip(&idf)
            .map(|(t, w)| doc.get(*t).copied().unwrap_or(0) as f64 * w)
            .collect();
        let norm = column.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidInput(format!(
                "document {:?} has no terms left after filtering",
                docs[j].0
            )));
        }
        for (t, v) in column.into_iter().enumerate() {
            x.set(t, j, v / norm);
        }
    }

    Ok(CorpusMatrix {
        x,
        vocab: Vocabulary::new(kept.into_iter().map(String::from).collect())?,
        doc_ids: docs.iter().map(|(id, _)| id.clone()).collect(),
        params: params.clone(),
    })
}

/// Reads every `.txt` file under `root`. Ids are `/`-separated paths relative
/// to `root`, returned in lexicographic order.
pub fn load_documents(root: &Path) -> Result<Vec<(String, String)>> {
    if !root.is_dir() {
        return Err(Error::InvalidInput(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let mut docs = Vec::new();
    for entry in WalkDir::new(root) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().and_then(|e| e.to_str()) != Some("txt")
        {
            continue;
        }
        let rel = path.strip_prefix(root).expect("walkdir stays under root");
        let id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        docs.push((id, text));
    }
    if docs.is_empty() {
        return Err(Error::NoDocuments);
    }
    docs.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(docs)
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    rows: usize,
    cols: usize,
    doc_ids: Vec<String>,
    vocab: Vec<String>,
    params: PipelineParams,
}

const CORPUS_FORMAT: &str = "gssnmf-corpus-v1";

/// Line 1: JSON header. Lines 2..=d+1: one CSV row of X per term.
pub fn save_corpus(c: &CorpusMatrix, path: &Path) -> Result<()> {
    let header = CorpusHeader {
        format: CORPUS_FORMAT.to_string(),
        rows: c.x.rows(),
        cols: c.x.cols(),
        doc_ids: c.doc_ids.clone(),
        vocab: c.vocab.terms().to_vec(),
        params: c.params.clone(),
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for i in 0..c.x.rows() {
        write_csv_row(&mut out, c.x.row(i));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: &Path) -> Result<CorpusMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty corpus file"))?;
    let header: CorpusHeader = serde_json::from_str(first)
        .map_err(|e| Error::parse(path, 1, format!("bad header: {e}")))?;
    if header.format != CORPUS_FORMAT {
        return Err(Error::parse(
            path,
            1,
            format!("unknown format {:?}", header.format),
        ));
    }
    let rows = parse_csv_rows(lines, path)?;
    if rows.len() != header.rows {
        return Err(Error::parse(
            path,
            rows.len() + 2,
            format!("expected {} matrix rows, found {}", header.rows, rows.len()),
        ));
    }
    if rows.first().map(Vec::len) != Some(header.cols) {
        return Err(Error::parse(
            path,
            2,
            format!("expected {} columns", header.cols),
        ));
    }
    if header.vocab.len() != header.rows || header.doc_ids.len() != header.cols {
        return Err(Error::parse(
            path,
            1,
            "header sizes disagree with matrix shape",
        ));
    }
    let x = Matrix::new(
        header.rows,
        header.cols,
        rows.into_iter().flatten().collect(),
    )?;
    Ok(CorpusMatrix {
        x,
        vocab: Vocabulary::new(header.vocab)?,
        doc_ids: header.doc_ids,
        params: header.params,
    })
}
