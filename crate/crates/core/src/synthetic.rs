//! Planted-topic corpora with known classes, for end-to-end checks and demos.
//!
//! Every topic owns a disjoint block of anchor words and prefers a random
//! subset of the shared background words. Each document has one primary
//! topic, which is also its true class; a fraction of the labels is then
//! replaced by a different class at random.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textpipe::{default_stopwords, stem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedSpec {
    pub n_docs: usize,
    pub n_terms: usize,
    pub n_topics: usize,
    pub anchors_per_topic: usize,
    pub doc_len: usize,
    /// Probability mass of a topic's anchor block in its word distribution.
    pub anchor_mass: f64,
    /// Share of each document's tokens drawn from its primary topic.
    pub primary_share: f64,
    /// Share of each topic's background mass spread over one profile common
    /// to all topics; the rest follows a topic-specific profile.
    pub shared_background: f64,
    /// Relative frequency of each class; uniform when empty.
    pub class_weights: Vec<f64>,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            n_docs: 200,
            n_terms: 300,
            n_topics: 3,
            anchors_per_topic: 10,
            doc_len: 120,
            anchor_mass: 0.1,
            primary_share: 0.7,
            shared_background: 0.9,
            class_weights: vec![0.5, 0.3, 0.2],
            label_noise: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorpus {
    pub documents: Vec<(String, String)>,
    /// Observed (possibly noisy) class of each document.
    pub assignments: BTreeMap<String, BTreeSet<String>>,
    /// Class of each document before label noise.
    pub true_classes: Vec<usize>,
    pub class_names: Vec<String>,
    /// Anchor words of each topic; the first one is the class name.
    pub anchors: Vec<Vec<String>>,
}

/// Pseudo-words that are fixed points of the stemmer and not stopwords, so
/// the generated vocabulary survives preprocessing unchanged.
fn word_list(count: usize) -> Vec<String> {
    const ONSETS: &[&str] = &[
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "t", "v", "z",
    ];
    const VOWELS: &[&str] = &["a", "o", "u"];
    const CODAS: &[&str] = &["k", "m", "p", "t", "x"];
    let stop = default_stopwords();
    let mut words = Vec::with_capacity(count);
    'outer: for o1 in ONSETS {
        for v1 in VOWELS {
            for o2 in ONSETS {
                for v2 in VOWELS {
                    for c in CODAS {
                        let w = format!("{o1}{v1}{o2}{v2}{c}");
                        if stem(&w) == w && !stop.contains(&w) {
                            words.push(w);
                            if words.len() == count {
                                break 'outer;
                            }
                        }
                    }
                }
            }
        }
    }
    words
}

pub fn planted_corpus(spec: &PlantedSpec) -> Result<PlantedCorpus> {
    let k = spec.n_topics;
    if k < 2 || spec.anchors_per_topic == 0 || k * spec.anchors_per_topic >= spec.n_terms {
        return Err(Error::Config(
            "need >= 2 topics and fewer anchor words than terms".into(),
        ));
    }
    if spec.n_docs < 2 || spec.doc_len == 0 {
        return Err(Error::Config(
            "need >= 2 documents of positive length".into(),
        ));
    }
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    if ![
        spec.anchor_mass,
        spec.primary_share,
        spec.label_noise,
        spec.shared_background,
    ]
    .into_iter()
    .all(unit)
    {
        return Err(Error::Config(
            "masses and noise rates must lie in [0, 1]".into(),
        ));
    }
    let class_weights = if spec.class_weights.is_empty() {
        vec![1.0; k]
    } else if spec.class_weights.len() == k {
        spec.class_weights.clone()
    } else {
        return Err(Error::Config(format!(
            "{} class weights for {k} topics",
            spec.class_weights.len()
        )));
    };

    let words = word_list(spec.n_terms);
    if words.len() < spec.n_terms {
        return Err(Error::Config(format!(
            "at most {} distinct terms available",
            words.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_anchor = k * spec.anchors_per_topic;
    let anchors: Vec<Vec<String>> = (0..k)
        .map(|t| words[t * spec.anchors_per_topic..(t + 1) * spec.anchors_per_topic].to_vec())
        .collect();
    let background = n_anchor..spec.n_terms;

    let mut profile = || -> Vec<f64> {
        let raw: Vec<f64> = background
            .clone()
            .map(|_| 0.05 + rng.gen::<f64>().powi(3))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    };
    let shared = profile();
    // topic-word weights: anchor block plus shared and topic-specific background
    let topic_weights: Vec<Vec<f64>> = (0..k)
        .map(|t| {
            let mut w = vec![0.0; spec.n_terms];
            let per_anchor = spec.anchor_mass / spec.anchors_per_topic as f64;
            for a in 0..spec.anchors_per_topic {
                w[t * spec.anchors_per_topic + a] = per_anchor;
            }
            let own = profile();
            let rest = 1.0 - spec.anchor_mass;
            for (b, i) in background.clone().enumerate() {
                w[i] = rest
                    * (spec.shared_background * shared[b]
                        + (1.0 - spec.shared_background) * own[b]);
            }
            w
        })
        .collect();
    let samplers: Vec<WeightedIndex<f64>> = topic_weights
        .iter()
        .map(|w| WeightedIndex::new(w).expect("positive weights"))
        .collect();
    let class_sampler = WeightedIndex::new(&class_weights)
        .map_err(|e| Error::Config(format!("bad class weights: {e}")))?;

    let class_names: Vec<String> = anchors.iter().map(|a| a[0].clone()).collect();
    let width = (spec.n_docs - 1).to_string().len();
    let mut documents = Vec::with_capacity(spec.n_docs);
    let mut assignments = BTreeMap::new();
    let mut true_classes = Vec::with_capacity(spec.n_docs);
    for j in 0..spec.n_docs {
        let primary = class_sampler.sample(&mut rng);
        let mut tokens = Vec::with_capacity(spec.doc_len);
        for _ in 0..spec.doc_len {
            let topic = if rng.gen::<f64>() < spec.primary_share {
                primary
            } else {
                (primary + 1 + rng.gen_range(0..k - 1)) % k
            };
            tokens.push(words[samplers[topic].sample(&mut rng)].as_str());
        }
        let observed = if rng.gen::<f64>() < spec.label_noise {
            (primary + 1 + rng.gen_range(0..k - 1)) % k
        } else {
            primary
        };
        let id = format!("doc{j:0width$}.txt");
        assignments.insert(id.clone(), BTreeSet::from([class_names[observed].clone()]));
        documents.push((id, tokens.join(" ")));
        true_classes.push(primary);
    }

    Ok(PlantedCorpus {
        documents,
        assignments,
        true_classes,
        class_names,
        anchors,
    })
}
