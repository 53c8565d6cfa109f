use std::collections::BTreeSet;

use gssnmf::evaluation::{coherence, macro_f1, threshold_predictions};
use gssnmf::linalg::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Enumerates every keyword pair and every document, counting with plain
/// integer loops.
fn brute_force_coherence(keywords: &[String], docs: &[BTreeSet<String>]) -> f64 {
    let count =
        |pred: &dyn Fn(&BTreeSet<String>) -> bool| docs.iter().filter(|d| pred(d)).count() as u64;
    let mut total = 0.0;
    for b in 1..keywords.len() {
        for l in 0..b {
            let (wb, wl) = (&keywords[b], &keywords[l]);
            let joint = count(&|d| d.contains(wb) && d.contains(wl));
            let single = count(&|d| d.contains(wl));
            total += ((joint + 1) as f64 / single as f64).ln();
        }
    }
    total
}

fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<BTreeSet<String>>) {
    let vocab: Vec<String> = (0..rng.gen_range(2..=8)).map(|i| format!("w{i}")).collect();
    let n_docs = rng.gen_range(1..=10);
    let mut docs: Vec<BTreeSet<String>> = (0..n_docs)
        .map(|_| {
            vocab
                .iter()
                .filter(|_| rng.gen_bool(0.4))
                .cloned()
                .collect()
        })
        .collect();
    // every word needs a document
    for w in &vocab {
        if !docs.iter().any(|d| d.contains(w)) {
            let j = rng.gen_range(0..docs.len());
            docs[j].insert(w.clone());
        }
    }
    (vocab, docs)
}

#[test]
fn coherence_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let (vocab, docs) = random_corpus(&mut rng);
        let n = rng.gen_range(2..=vocab.len().min(5));
        let mut kw = vocab.clone();
        for i in (1..kw.len()).rev() {
            kw.swap(i, rng.gen_range(0..=i));
        }
        kw.truncate(n);
        assert_eq!(
            coherence(&kw, &docs).unwrap(),
            brute_force_coherence(&kw, &docs)
        );
    }
}

fn f1_oracle(pred: &[Vec<u8>], truth: &[Vec<u8>]) -> f64 {
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        let tp = p
            .iter()
            .zip(t)
            .filter(|(a, b)| **a == 1 && **b == 1)
            .count() as f64;
        let fp = p
            .iter()
            .zip(t)
            .filter(|(a, b)| **a == 1 && **b == 0)
            .count() as f64;
        let fn_ = p
            .iter()
            .zip(t)
            .filter(|(a, b)| **a == 0 && **b == 1)
            .count() as f64;
        sum += if tp + fp + fn_ == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
    }
    sum / pred.len() as f64
}

fn binary(p: usize, m: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
    proptest::collection::vec(proptest::collection::vec(0u8..=1, m), p)
}

fn to_matrix(rows: &[Vec<u8>]) -> Matrix {
    Matrix::from_rows(
        &rows
            .iter()
            .map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    )
}

proptest! {
    #[test]
    fn macro_f1_matches_oracle((pred, truth) in (1usize..=5, 1usize..=20).prop_flat_map(|(p, m)| (binary(p, m), binary(p, m)))) {
        let got = macro_f1(&to_matrix(&pred), &to_matrix(&truth)).unwrap();
        prop_assert!((got.macro_f1 - f1_oracle(&pred, &truth)).abs() < 1e-12);
        let mean = got.per_class.iter().sum::<f64>() / got.per_class.len() as f64;
        prop_assert!((got.macro_f1 - mean).abs() < 1e-12);
    }

    #[test]
    fn macro_f1_is_permutation_equivariant(
        (pred, truth) in (2usize..=5, 1usize..=20).prop_flat_map(|(p, m)| (binary(p, m), binary(p, m))),
        seed in any::<u64>(),
    ) {
        let mut order: Vec<usize> = (0..pred.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let perm = |m: &[Vec<u8>]| order.iter().map(|&i| m[i].clone()).collect::<Vec<_>>();
        let a = macro_f1(&to_matrix(&pred), &to_matrix(&truth)).unwrap().macro_f1;
        let b = macro_f1(&to_matrix(&perm(&pred)), &to_matrix(&perm(&truth))).unwrap().macro_f1;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn threshold_column_sums_equal_counts(
        scores in proptest::collection::vec(0.0f64..1.0, 4 * 6),
        counts in proptest::collection::vec(1usize..=4, 6),
    ) {
        let s = Matrix::new(4, 6, scores).unwrap();
        let t = threshold_predictions(&s, &counts).unwrap();
        for (j, &c) in counts.iter().enumerate() {
            prop_assert_eq!(t.column(j).iter().sum::<f64>(), c as f64);
            // every selected score dominates every unselected one
            let col = s.column(j);
            let sel = t.column(j);
            let min_sel = (0..4).filter(|&i| sel[i] == 1.0).map(|i| col[i]).fold(f64::INFINITY, f64::min);
            let max_rest = (0..4).filter(|&i| sel[i] == 0.0).map(|i| col[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_sel >= max_rest);
        }
    }
}
