//! Seed matrix Y, label matrix Z and masking matrix L, plus their file formats.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::textpipe::{stem, tokenize, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct SeedMatrix {
    /// d × s, one unit column per seed word.
    pub y: Matrix,
    /// Stemmed seed word behind each column.
    pub seed_words: Vec<String>,
    /// Seed entries (as given) with no constituent word in the vocabulary.
    pub dropped: Vec<String>,
}

/// One column per constituent word of each seed entry that is present in the
/// vocabulary after stemming. Entries may be phrases.
pub fn build_seed_matrix<S: AsRef<str>>(
    seed_words: &[S],
    vocab: &Vocabulary,
) -> Result<SeedMatrix> {
    let mut rows = Vec::new();
    let mut words = Vec::new();
    let mut dropped = Vec::new();
    for entry in seed_words {
        let entry = entry.as_ref();
        let before = rows.len();
        for tok in tokenize(entry) {
            let stemmed = stem(&tok);
            if let Some(row) = vocab.index_of(&stemmed) {
                rows.push(row);
                words.push(stemmed);
            }
        }
        if rows.len() == before {
            warn!("seed word {entry:?} not in vocabulary; dropped");
            dropped.push(entry.to_string());
        }
    }
    if rows.is_empty() {
        return Err(Error::NoSeedWords);
    }
    let mut y = Matrix::zeros(vocab.len(), rows.len());
    for (col, &row) in rows.iter().enumerate() {
        y.set(row, col, 1.0);
    }
    Ok(SeedMatrix {
        y,
        seed_words: words,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    /// p × n binary.
    pub z: Matrix,
    /// Sorted class names, one per row.
    pub label_names: Vec<String>,
}

impl LabelMatrix {
    /// Number of labels carried by each document.
    pub fn label_counts(&self) -> Vec<usize> {
        (0..self.z.cols())
            .map(|j| {
                (0..self.z.rows())
                    .filter(|&i| self.z.get(i, j) != 0.0)
                    .count()
            })
            .collect()
    }
}

/// Encodes class assignments against the corpus document order. Every corpus
/// document needs at least one class and every assigned id must exist.
pub fn build_label_matrix(
    assignments: &BTreeMap<String, BTreeSet<String>>,
    doc_ids: &[String],
) -> Result<LabelMatrix> {
    let known: BTreeSet<&str> = doc_ids.iter().map(String::as_str).collect();
    if let Some(unknown) = assignments.keys().find(|id| !known.contains(id.as_str())) {
        return Err(Error::InvalidInput(format!(
            "label assignment for unknown document {unknown:?}"
        )));
    }
    let classes: BTreeSet<&String> = assignments.values().flatten().collect();
    let label_names: Vec<String> = classes.into_iter().cloned().collect();
    if label_names.is_empty() {
        return Err(Error::InvalidInput("no class labels assigned".into()));
    }
    let mut z = Matrix::zeros(label_names.len(), doc_ids.len());
    for (j, id) in doc_ids.iter().enumerate() {
        let set = assignments
            .get(id)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::InvalidInput(format!("document {id:?} has no class label")))?;
        for class in set {
            let i = label_names
                .binary_search(class)
                .expect("class drawn from assignments");
            z.set(i, j, 1.0);
        }
    }
    Ok(LabelMatrix { z, label_names })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskMatrix {
    /// p × n; ones on training columns, zeros on test columns.
    pub l: Matrix,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

/// Serialized form of a split: the mask itself is rebuilt from the ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub n: usize,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

impl MaskMatrix {
    pub fn from_split(p: usize, n: usize, mut train_ids: Vec<usize>) -> Result<Self> {
        if p == 0 || n < 2 {
            return Err(Error::InvalidInput(format!(
                "mask needs p >= 1 and n >= 2, got p={p}, n={n}"
            )));
        }
        train_ids.sort_unstable();
        train_ids.dedup();
        if train_ids.last().is_some_and(|&i| i >= n) {
            return Err(Error::OutOfRange(format!(
                "train index beyond {n} documents"
            )));
        }
        let train: BTreeSet<usize> = train_ids.iter().copied().collect();
        let test_ids: Vec<usize> = (0..n).filter(|j| !train.contains(j)).collect();
        let l = Matrix::from_fn(p, n, |_, j| if train.contains(&j) { 1.0 } else { 0.0 });
        Ok(MaskMatrix {
            l,
            train_ids,
            test_ids,
        })
    }

    pub fn to_split_file(&self) -> SplitFile {
        SplitFile {
            n: self.l.cols(),
            train_ids: self.train_ids.clone(),
            test_ids: self.test_ids.clone(),
        }
    }
}

/// Number of training columns: ⌈fraction·n⌉, capped at n − 1.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    // the small offset keeps e.g. 0.7 * 10 from rounding up to 8
    let raw = (train_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    raw.min(n.saturating_sub(1))
}

/// Uniform random train/test split of `n` documents for `p` classes.
pub fn split_mask(p: usize, n: usize, train_fraction: f64, rng_seed: u64) -> Result<MaskMatrix> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("cannot split {n} documents")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    idx.shuffle(&mut rng);
    idx.truncate(train_count(n, train_fraction));
    MaskMatrix::from_split(p, n, idx)
}

/// Reads `doc_id,class1;class2;...` lines. Blank lines and `#` comments are
/// skipped; a leading `doc_id,...` header row is tolerated.
pub fn read_label_assignments(path: &Path) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, classes) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(path, idx + 1, "expected `doc_id,classes`"))?;
        let id = id.trim();
        if idx == 0 && id == "doc_id" {
            continue;
        }
        let set: BTreeSet<String> = classes
            .split(';')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(String::from)
            .collect();
        if out.insert(id.to_string(), set).is_some() {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("duplicate document {id:?}"),
            ));
        }
    }
    Ok(out)
}

/// One seed word or phrase per line; blank lines and `#` comments skipped.
pub fn read_seed_words(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hadamard;

    fn vocab(terms: &[&str]) -> Vocabulary {
        Vocabulary::new(terms.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn seed_matrix_direct_and_stemmed_lookup() {
        let v = vocab(&[
            "alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "murder", "robberi",
        ]);
        let s = build_seed_matrix(&["murder"], &v).unwrap();
        assert_eq!(s.y.shape(), (9, 1));
        assert_eq!(
            s.y.column(0),
            (0..9)
                .map(|i| if i == 7 { 1.0 } else { 0.0 })
                .collect::<Vec<_>>()
        );
        let s = build_seed_matrix(&["robbery"], &v).unwrap();
        assert_eq!(s.y.get(8, 0), 1.0);
        assert_eq!(s.seed_words, ["robberi"]);
        assert!(matches!(
            build_seed_matrix(&["zzzz"], &v),
            Err(Error::NoSeedWords)
        ));
    }

    #[test]
    fn seed_phrases_split_and_absent_words_recorded() {
        let v = vocab(&["gang", "murder", "attempt"]);
        let s = build_seed_matrix(&["attempted murder", "arson"], &v).unwrap();
        assert_eq!(s.seed_words, ["attempt", "murder"]);
        assert_eq!(s.dropped, ["arson"]);
        for j in 0..s.y.cols() {
            assert_eq!(s.y.column(j).iter().sum::<f64>(), 1.0);
        }
    }

    fn assignments(pairs: &[(&str, &[&str])]) -> BTreeMap<String, BTreeSet<String>> {
        pairs
            .iter()
            .map(|(d, cs)| (d.to_string(), cs.iter().map(|c| c.to_string()).collect()))
            .collect()
    }

    #[test]
    fn label_matrix_examples() {
        let ids = vec!["d1".to_string(), "d2".to_string()];
        let lm = build_label_matrix(
            &assignments(&[("d1", &["murder"]), ("d2", &["murder", "gang"])]),
            &ids,
        )
        .unwrap();
        assert_eq!(lm.label_names, ["gang", "murder"]);
        assert_eq!(lm.z, Matrix::from_rows(&[[0.0, 1.0], [1.0, 1.0]]));
        assert_eq!(lm.label_counts(), [1, 2]);

        let lm = build_label_matrix(&assignments(&[("d1", &["x"]), ("d2", &["x"])]), &ids).unwrap();
        assert_eq!(lm.z, Matrix::ones(1, 2));

        assert!(build_label_matrix(&assignments(&[("d1", &["x"]), ("d2", &[])]), &ids).is_err());
        assert!(build_label_matrix(
            &assignments(&[("d1", &["x"]), ("d2", &["x"]), ("d3", &["x"])]),
            &ids
        )
        .is_err());
        assert!(build_label_matrix(&assignments(&[("d1", &["x"])]), &ids).is_err());
    }

    #[test]
    fn split_sizes() {
        let m = split_mask(2, 10, 0.7, 1).unwrap();
        assert_eq!((m.train_ids.len(), m.test_ids.len()), (7, 3));
        assert_eq!(m, split_mask(2, 10, 0.7, 1).unwrap());
        let m = split_mask(1, 3, 0.7, 5).unwrap();
        assert_eq!((m.train_ids.len(), m.test_ids.len()), (2, 1));
        assert!(split_mask(1, 10, 1.0, 0).is_err());
        assert!(split_mask(1, 10, 0.0, 0).is_err());
    }

    #[test]
    fn mask_zeroes_test_columns_only() {
        let z = Matrix::from_fn(3, 12, |i, j| ((i + j) % 2) as f64);
        let m = split_mask(3, 12, 0.7, 9).unwrap();
        let masked = hadamard(&m.l, &z).unwrap();
        for &j in &m.test_ids {
            assert!(masked.column(j).iter().all(|&v| v == 0.0));
        }
        for &j in &m.train_ids {
            assert_eq!(masked.column(j), z.column(j));
        }
        let mut all: Vec<usize> = m.train_ids.iter().chain(&m.test_ids).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_uniform_over_many_seeds() {
        let (n, frac) = (20, 0.7);
        let mut hits = vec![0usize; n];
        for seed in 0..1000 {
            let m = split_mask(1, n, frac, seed).unwrap();
            assert_eq!(m.train_ids.len(), 14);
            for &j in &m.train_ids {
                hits[j] += 1;
            }
        }
        for h in hits {
            assert!((h as f64 / 1000.0 - frac).abs() < 0.05, "{h}");
        }
    }

    #[test]
    fn label_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        fs::write(
            &path,
            "doc_id,classes\na.txt,murder;gang\n\nb.txt, robbery \n",
        )
        .unwrap();
        let a = read_label_assignments(&path).unwrap();
        assert_eq!(a["a.txt"].len(), 2);
        assert!(a["b.txt"].contains("robbery"));
        fs::write(&path, "a.txt murder\n").unwrap();
        assert!(read_label_assignments(&path)
            .unwrap_err()
            .to_string()
            .contains(":1:"));
    }
}
