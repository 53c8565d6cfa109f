use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gssnmf::experiment::Metric;
use serde_json::Value;

#[derive(Debug, Parser)]
#[command(
    name = "gssnmf",
    version,
    about = "Guided semi-supervised NMF for topic modeling and classification"
)]
pub struct Cli {
    /// JSON object supplying any flag of the subcommand; explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a tf-idf corpus file from a directory of .txt documents.
    Ingest(IngestArgs),
    /// Leading singular values of the corpus matrix.
    RankScan(RankScanArgs),
    /// Fit one model and write its factors.
    Factorize(FactorizeArgs),
    /// Macro F1 of a label-supervised model on its test split.
    Classify(ClassifyArgs),
    /// Top keywords and coherence of every topic.
    Coherence(CoherenceArgs),
    /// Grid sweep over (rank, lambda, mu) with repeated trials.
    Sweep(SweepArgs),
    /// SVG heatmap of a sweep's mean CSV.
    Plot(PlotArgs),
    /// Write a planted-topic demo corpus with labels and seed words.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub corpus_dir: PathBuf,
    /// Output corpus file.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON with max_df, min_df, max_features and stopwords_file.
    #[arg(long, value_name = "FILE")]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub max_df: Option<f64>,
    #[arg(long)]
    pub min_df: Option<f64>,
    #[arg(long)]
    pub max_features: Option<usize>,
    /// Stopword list, one word per line.
    #[arg(long, value_name = "FILE", conflicts_with = "no_stopwords")]
    pub stopwords: Option<PathBuf>,
    #[arg(long)]
    pub no_stopwords: bool,
}

#[derive(Debug, Args)]
pub struct RankScanArgs {
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub top: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FactorizeArgs {
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub rank: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    /// Initialization seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = gssnmf::linalg::DEFAULT_EPS)]
    pub eps: f64,
    /// Relative objective change that stops fitting early; 0 runs all iterations.
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    /// Seed words, one per line.
    #[arg(long, value_name = "FILE")]
    pub seeds: Option<PathBuf>,
    /// Labels as `doc_id,class1;class2` lines.
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    /// Existing split (mask.json); a fresh split is drawn otherwise.
    #[arg(long, value_name = "FILE")]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Result directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    pub result_dir: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub labels: PathBuf,
    /// Split file; defaults to mask.json inside the result directory.
    #[arg(long, value_name = "FILE")]
    pub mask: Option<PathBuf>,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoherenceArgs {
    pub result_dir: PathBuf,
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub n_top: usize,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Plain-text keyword table.
    #[arg(long, value_name = "FILE")]
    pub table: Option<PathBuf>,
    /// Keyword rows shown in the table.
    #[arg(long, default_value_t = 10)]
    pub table_rows: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum MetricArg {
    MacroF1,
    AvgCoherence,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::MacroF1 => Metric::MacroF1,
            MetricArg::AvgCoherence => Metric::AvgCoherence,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub corpus: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub seeds: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub mus: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub ranks: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Trial t uses seed base + t for both split and initialization.
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    #[arg(long, value_enum, default_value = "macro_f1")]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 500)]
    pub iters: usize,
    #[arg(long, default_value_t = gssnmf::linalg::DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    #[arg(long, default_value_t = 30)]
    pub n_top: usize,
    /// Long-form CSV; `<stem>_mean.csv` and `<stem>_best_mu.csv` go beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Mean CSV written by `sweep`.
    pub means: PathBuf,
    /// Rank to plot; the smallest rank in the file by default.
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory receiving docs/, labels.csv and seeds.txt.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub docs: usize,
    #[arg(long, default_value_t = 300)]
    pub terms: usize,
    #[arg(long, default_value_t = 3)]
    pub topics: usize,
    #[arg(long, default_value_t = 0.15)]
    pub label_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Appends flags from the `--config` file that the command line does not
/// already set. Booleans become bare switches, arrays comma-joined values.
pub fn merge_config(argv: Vec<OsString>) -> anyhow::Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let Value::Object(map) = value else {
        bail!("config {} must hold a JSON object", path.display());
    };
    let present: Vec<String> = argv
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let mut out = argv;
    for (key, v) in map {
        let flag = key.replace('_', "-");
        if flag == "config" || present.contains(&flag) {
            continue;
        }
        let text = match v {
            Value::Bool(true) => {
                out.push(format!("--{flag}").into());
                continue;
            }
            Value::Bool(false) | Value::Null => continue,
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    _ => bail!("config key {key:?}: list items must be numbers or strings"),
                })
                .collect::<anyhow::Result<Vec<_>>>()?
                .join(","),
            Value::Object(_) => bail!("config key {key:?}: nested objects are not flags"),
        };
        out.push(format!("--{flag}").into());
        out.push(text.into());
    }
    Ok(out)
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_str()?;
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn config_fills_missing_flags_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(
            &cfg,
            r#"{"rank": 4, "train_fraction": 0.5, "mus": [0.1, 1], "no_stopwords": true}"#,
        )
        .unwrap();
        let argv = os(&[
            "gssnmf",
            "sweep",
            "x",
            "--rank=7",
            "--config",
            cfg.to_str().unwrap(),
        ]);
        let merged = merge_config(argv).unwrap();
        let tail: Vec<_> = merged[6..].iter().map(|s| s.to_str().unwrap()).collect();
        assert_eq!(
            tail,
            [
                "--mus",
                "0.1,1",
                "--no-stopwords",
                "--train-fraction",
                "0.5"
            ]
        );
    }

    #[test]
    fn no_config_is_identity() {
        let argv = os(&["gssnmf", "ingest", "dir", "--out", "c"]);
        assert_eq!(merge_config(argv.clone()).unwrap(), argv);
    }
}
