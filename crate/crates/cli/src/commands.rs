use std::fmt;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::Deserialize;

use gssnmf::evaluation::EvalReport;
use gssnmf::experiment::{
    aggregate, best_mu_csv, best_mu_per_lambda, classify, heatmap_svg, means_csv, parse_means_csv,
    rows_csv, run_sweep, topic_report, SweepInputs, SweepSpec,
};
use gssnmf::factorization::{fit, load_result, save_result, ModelConfig, Problem};
use gssnmf::linalg::singular_values;
use gssnmf::supervision::{
    build_label_matrix, build_seed_matrix, read_label_assignments, read_seed_words, split_mask,
    LabelMatrix, MaskMatrix, SeedMatrix, SplitFile,
};
use gssnmf::synthetic::{planted_corpus, PlantedSpec};
use gssnmf::textpipe::{
    build_corpus, default_stopwords, load_corpus, load_documents, parse_stopwords, save_corpus,
    PipelineParams,
};

use crate::args::*;

const DOC_IDS_FILE: &str = "doc_ids.txt";
const MASK_FILE: &str = "mask.json";

/// Failure to write a result, as opposed to a problem with the inputs.
#[derive(Debug)]
pub struct OutputError {
    path: PathBuf,
    source: io::Error,
}

impl fmt::Display for OutputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cannot write {}", self.path.display())
    }
}

impl std::error::Error for OutputError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| OutputError {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| OutputError {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Writes to `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, contents),
        None => io::stdout()
            .write_all(contents.as_bytes())
            .map_err(|source| {
                OutputError {
                    path: "<stdout>".into(),
                    source,
                }
                .into()
            }),
    }
}

fn json_pretty<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::RankScan(a) => rank_scan(a),
        Command::Factorize(a) => factorize(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Coherence(a) => coherence_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Plot(a) => plot(a),
        Command::Synth(a) => synth(a),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    max_df: Option<f64>,
    min_df: Option<f64>,
    max_features: Option<usize>,
    /// Relative paths resolve against the params file's directory.
    stopwords_file: Option<PathBuf>,
}

fn pipeline_params(a: &IngestArgs) -> Result<PipelineParams> {
    let mut params = PipelineParams::default();
    let mut stopwords_file = None;
    if let Some(path) = &a.params {
        let text = fs::read_to_string(path).map_err(|e| gssnmf::Error::io(path, e))?;
        let file: ParamsFile =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        params.max_df = file.max_df.unwrap_or(params.max_df);
        params.min_df = file.min_df.unwrap_or(params.min_df);
        params.max_features = file.max_features.unwrap_or(params.max_features);
        stopwords_file = file
            .stopwords_file
            .map(|p| path.parent().map(|dir| dir.join(&p)).unwrap_or(p));
    }
    params.max_df = a.max_df.unwrap_or(params.max_df);
    params.min_df = a.min_df.unwrap_or(params.min_df);
    params.max_features = a.max_features.unwrap_or(params.max_features);
    if let Some(p) = &a.stopwords {
        stopwords_file = Some(p.clone());
    }
    params.stopwords = if a.no_stopwords {
        Default::default()
    } else if let Some(p) = stopwords_file {
        let text = fs::read_to_string(&p).map_err(|e| gssnmf::Error::io(&p, e))?;
        parse_stopwords(&text)
    } else {
        default_stopwords()
    };
    params.validate()?;
    Ok(params)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let params = pipeline_params(&a)?;
    let docs = load_documents(&a.corpus_dir)?;
    let corpus = build_corpus(&docs, &params)?;
    save_corpus(&corpus, &a.out).map_err(|e| match e {
        gssnmf::Error::Io { path, source } => anyhow::Error::new(OutputError { path, source }),
        other => other.into(),
    })?;
    println!(
        "d={} n={} density={:.6}",
        corpus.n_terms(),
        corpus.n_docs(),
        corpus.density()
    );
    Ok(())
}

fn rank_scan(a: RankScanArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let spectrum = singular_values(&corpus.x, a.top)?;
    let mut out = String::from("index,singular_value\n");
    for (i, s) in spectrum.singular_values.iter().enumerate() {
        out.push_str(&format!("{},{s}\n", i + 1));
    }
    emit(a.out.as_deref(), &out)
}

fn load_labels(path: &Path, doc_ids: &[String]) -> Result<LabelMatrix> {
    let assignments = read_label_assignments(path)?;
    Ok(build_label_matrix(&assignments, doc_ids)?)
}

fn load_mask(path: &Path, p: usize, n: usize) -> Result<MaskMatrix> {
    let text = fs::read_to_string(path).map_err(|e| gssnmf::Error::io(path, e))?;
    let split: SplitFile =
        serde_json::from_str(&text).with_context(|| format!("parsing split {}", path.display()))?;
    if split.n != n {
        bail!(
            "split {} covers {} documents, corpus has {n}",
            path.display(),
            split.n
        );
    }
    let mask = MaskMatrix::from_split(p, n, split.train_ids)?;
    if mask.test_ids != split.test_ids {
        bail!(
            "split {}: test ids are not the complement of train ids",
            path.display()
        );
    }
    Ok(mask)
}

fn factorize(a: FactorizeArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let config = ModelConfig {
        rank: a.rank,
        lambda: a.lambda,
        mu: a.mu,
        max_iters: a.iters,
        rng_seed: a.seed,
        eps: a.eps,
        tol: a.tol,
    };
    config.validate()?;
    if a.lambda > 0.0 && a.seeds.is_none() {
        bail!(gssnmf::Error::Config(
            "--lambda > 0 needs --seeds FILE".into()
        ));
    }
    if a.mu > 0.0 && a.labels.is_none() {
        bail!(gssnmf::Error::Config("--mu > 0 needs --labels FILE".into()));
    }

    let seeds: Option<SeedMatrix> = match (&a.seeds, a.lambda > 0.0) {
        (Some(path), true) => Some(build_seed_matrix(&read_seed_words(path)?, &corpus.vocab)?),
        (Some(_), false) => {
            warn!("--seeds ignored because --lambda is 0");
            None
        }
        _ => None,
    };
    let supervision: Option<(LabelMatrix, MaskMatrix)> = match (&a.labels, a.mu > 0.0) {
        (Some(path), true) => {
            let labels = load_labels(path, &corpus.doc_ids)?;
            let (p, n) = labels.z.shape();
            let mask = match &a.mask {
                Some(m) => load_mask(m, p, n)?,
                None => split_mask(p, n, a.train_fraction, a.split_seed)?,
            };
            Some((labels, mask))
        }
        (Some(_), false) => {
            warn!("--labels ignored because --mu is 0");
            None
        }
        _ => None,
    };

    let mut problem = Problem::new(&corpus.x);
    if let Some(s) = &seeds {
        problem = problem.with_seeds(&s.y);
    }
    if let Some((labels, mask)) = &supervision {
        problem = problem.with_labels(&labels.z, &mask.l);
    }
    let result = fit(&problem, &config)?;

    let label_names = supervision.as_ref().map(|(l, _)| l.label_names.as_slice());
    let seed_words = seeds.as_ref().map(|s| s.seed_words.as_slice());
    save_result(&result, &a.out, label_names, seed_words).map_err(|e| match e {
        gssnmf::Error::Io { path, source } => anyhow::Error::new(OutputError { path, source }),
        other => other.into(),
    })?;
    write_file(&a.out.join(DOC_IDS_FILE), corpus.doc_ids.join("\n") + "\n")?;
    if let Some((_, mask)) = &supervision {
        write_file(&a.out.join(MASK_FILE), json_pretty(&mask.to_split_file())?)?;
    }

    let last = result.final_losses();
    println!(
        "model {:?}, {} iterations",
        result.kind,
        result.iterations()
    );
    println!(
        "objective {:.6e} -> {:.6e} (reconstruction {:.6e}, guiding {:.6e}, label {:.6e})",
        result.initial.total, last.total, last.reconstruction, last.guiding, last.label
    );
    let violations = result.monotonicity_violations(1e-9);
    if !violations.is_empty() {
        warn!("objective increased at iterations {violations:?}");
    }
    Ok(())
}

fn read_doc_ids(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(DOC_IDS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| gssnmf::Error::io(&path, e))?;
    Ok(text.lines().map(String::from).collect())
}

fn classify_cmd(a: ClassifyArgs) -> Result<()> {
    let run = load_result(&a.result_dir)?;
    if run.factors.c.is_none() {
        bail!(gssnmf::Error::InvalidInput(
            "model was not label-supervised".into()
        ));
    }
    let doc_ids = read_doc_ids(&a.result_dir)?;
    let labels = load_labels(&a.labels, &doc_ids)?;
    if let Some(names) = &run.manifest.label_names {
        if *names != labels.label_names {
            bail!(
                "label classes {:?} differ from the model's {:?}",
                labels.label_names,
                names
            );
        }
    }
    let mask_path = a.mask.unwrap_or_else(|| a.result_dir.join(MASK_FILE));
    let (p, n) = labels.z.shape();
    let mask = load_mask(&mask_path, p, n)?;
    let scores = classify(&run.factors, &labels, &mask)?;
    info!(
        "macro F1 {:.4} on {} test documents",
        scores.macro_f1,
        mask.test_ids.len()
    );
    let report = EvalReport::default().with_f1(scores, Some(labels.label_names));
    emit(a.out.as_deref(), &json_pretty(&report)?)
}

fn coherence_cmd(a: CoherenceArgs) -> Result<()> {
    let run = load_result(&a.result_dir)?;
    let corpus = load_corpus(&a.corpus)?;
    if run.factors.w.rows() != corpus.n_terms() {
        bail!(gssnmf::Error::InvalidInput(format!(
            "model has {} terms, corpus {}",
            run.factors.w.rows(),
            corpus.n_terms()
        )));
    }
    let report = topic_report(&run.factors.w, &corpus, a.n_top)?;
    if let Some(path) = &a.table {
        write_file(path, report.topic_table(a.table_rows))?;
    }
    emit(a.out.as_deref(), &json_pretty(&report)?)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    path.with_file_name(format!("{stem}{suffix}.csv"))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let labels = a
        .labels
        .as_deref()
        .map(|p| load_labels(p, &corpus.doc_ids))
        .transpose()?;
    let seeds = match &a.seeds {
        Some(p) => Some(build_seed_matrix(&read_seed_words(p)?, &corpus.vocab)?),
        None => None,
    };
    let spec = SweepSpec {
        lambda_grid: a.lambdas,
        mu_grid: a.mus,
        ranks: a.ranks,
        trials: a.trials,
        base_rng_seed: a.base_seed,
        train_fraction: a.train_fraction,
        metric: a.metric.into(),
        max_iters: a.iters,
        eps: a.eps,
        tol: a.tol,
        n_top: a.n_top,
    };
    spec.validate()?;
    let inputs = SweepInputs {
        corpus: &corpus,
        labels: labels.as_ref(),
        seeds: seeds.as_ref(),
    };
    let rows = run_sweep(&inputs, &spec)?;
    let means = aggregate(&rows);
    write_file(&a.out, rows_csv(&rows))?;
    write_file(&sibling(&a.out, "_mean"), means_csv(&means))?;
    write_file(
        &sibling(&a.out, "_best_mu"),
        best_mu_csv(&best_mu_per_lambda(&means)),
    )?;
    let best = means
        .iter()
        .max_by(|x, y| x.mean.total_cmp(&y.mean))
        .expect("non-empty grid");
    println!(
        "{} cells x {} trials; best mean {} {:.6} at rank={} lambda={} mu={}",
        means.len(),
        spec.trials,
        spec.metric.name(),
        best.mean,
        best.rank,
        best.lambda,
        best.mu
    );
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.means).map_err(|e| gssnmf::Error::io(&a.means, e))?;
    let means = parse_means_csv(&text)?;
    let rank = match a.rank {
        Some(r) => r,
        None => match means.iter().map(|m| m.rank).min() {
            Some(r) => r,
            None => bail!(gssnmf::Error::InvalidInput(format!(
                "{} has no cells",
                a.means.display()
            ))),
        },
    };
    let title = a.title.unwrap_or_else(|| format!("rank {rank}"));
    write_file(&a.out, heatmap_svg(&means, rank, &title)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = PlantedSpec {
        n_docs: a.docs,
        n_terms: a.terms,
        n_topics: a.topics,
        label_noise: a.label_noise,
        seed: a.seed,
        ..PlantedSpec::default()
    };
    let spec = if spec.class_weights.len() == spec.n_topics {
        spec
    } else {
        PlantedSpec {
            class_weights: Vec::new(),
            ..spec
        }
    };
    let planted = planted_corpus(&spec)?;
    let docs_dir = a.out.join("docs");
    for (id, text) in &planted.documents {
        write_file(&docs_dir.join(id), format!("{text}\n"))?;
    }
    let mut labels = String::from("doc_id,classes\n");
    for (id, classes) in &planted.assignments {
        let joined: Vec<&str> = classes.iter().map(String::as_str).collect();
        labels.push_str(&format!("{id},{}\n", joined.join(";")));
    }
    write_file(&a.out.join("labels.csv"), labels)?;
    write_file(
        &a.out.join("seeds.txt"),
        planted.class_names.join("\n") + "\n",
    )?;
    println!(
        "{} documents, {} classes in {}",
        planted.documents.len(),
        planted.class_names.len(),
        a.out.display()
    );
    Ok(())
}
