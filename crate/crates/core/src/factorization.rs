//! The GSSNMF objective and its multiplicative-update solver.
//!
//! ```text
//! F(W, H, B, C) = ½‖X − WH‖²  +  (λ/2)‖Y − WB‖²  +  (μ/2)‖L ⊙ (Z − CH)‖²
//! ```
//!
//! Setting λ = 0 gives SSNMF, μ = 0 gives Guided NMF, and both zero give
//! classical NMF. One iteration applies the W, H, B and C rules in that order,
//! each reading the factors already updated earlier in the same iteration.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, hadamard, matmul, safe_divide, Matrix, DEFAULT_EPS};
use crate::textpipe::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub rank: usize,
    /// Weight of the seed-word guiding term.
    pub lambda: f64,
    /// Weight of the label term.
    pub mu: f64,
    pub max_iters: usize,
    pub rng_seed: u64,
    pub eps: f64,
    /// Relative objective change below which fitting stops; 0 disables.
    pub tol: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            rank: 8,
            lambda: 0.0,
            mu: 0.0,
            max_iters: 500,
            rng_seed: 0,
            eps: DEFAULT_EPS,
            tol: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !self.eps.is_finite() || self.eps <= 0.0 {
            return Err(Error::Config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu), ("tol", self.tol)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Classical,
    SemiSupervised,
    Guided,
    GuidedSemiSupervised,
}

impl ModelKind {
    pub fn from_weights(lambda: f64, mu: f64) -> Self {
        match (lambda > 0.0, mu > 0.0) {
            (false, false) => ModelKind::Classical,
            (false, true) => ModelKind::SemiSupervised,
            (true, false) => ModelKind::Guided,
            (true, true) => ModelKind::GuidedSemiSupervised,
        }
    }
}

/// Label matrix Z with its mask L, both p × n.
#[derive(Debug, Clone, Copy)]
pub struct LabelInputs<'a> {
    pub z: &'a Matrix,
    pub l: &'a Matrix,
}

/// The fixed inputs of one fit.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    /// d × n data.
    pub x: &'a Matrix,
    /// d × s seed matrix.
    pub y: Option<&'a Matrix>,
    pub labels: Option<LabelInputs<'a>>,
}

impl<'a> Problem<'a> {
    pub fn new(x: &'a Matrix) -> Self {
        Problem {
            x,
            y: None,
            labels: None,
        }
    }

    pub fn with_seeds(mut self, y: &'a Matrix) -> Self {
        self.y = Some(y);
        self
    }

    pub fn with_labels(mut self, z: &'a Matrix, l: &'a Matrix) -> Self {
        self.labels = Some(LabelInputs { z, l });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (d, n) = self.x.shape();
        if !self.x.is_nonnegative() {
            return Err(Error::InvalidInput("X has negative entries".into()));
        }
        if let Some(y) = self.y {
            if y.rows() != d {
                return Err(Error::Shape {
                    op: "seed matrix Y (rows must match X)",
                    left: self.x.shape(),
                    right: y.shape(),
                });
            }
            if !y.is_nonnegative() {
                return Err(Error::InvalidInput("Y has negative entries".into()));
            }
        }
        if let Some(LabelInputs { z, l }) = self.labels {
            if z.cols() != n {
                return Err(Error::Shape {
                    op: "label matrix Z (columns must match X)",
                    left: self.x.shape(),
                    right: z.shape(),
                });
            }
            if l.shape() != z.shape() {
                return Err(Error::Shape {
                    op: "mask L (must match Z)",
                    left: z.shape(),
                    right: l.shape(),
                });
            }
            if !z.is_nonnegative() || !l.is_nonnegative() {
                return Err(Error::InvalidInput("Z and L must be non-negative".into()));
            }
        }
        Ok(())
    }

    fn check_weights(&self, lambda: f64, mu: f64) -> Result<()> {
        if lambda > 0.0 && self.y.is_none() {
            return Err(Error::Config("lambda > 0 requires a seed matrix".into()));
        }
        if mu > 0.0 && self.labels.is_none() {
            return Err(Error::Config("mu > 0 requires labels and a mask".into()));
        }
        Ok(())
    }
}

/// W (d×k), H (k×n), and B (k×s) / C (p×k) when the matching supervision exists.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    pub w: Matrix,
    pub h: Matrix,
    pub b: Option<Matrix>,
    pub c: Option<Matrix>,
}

impl Factors {
    /// I.i.d. uniform [0, 1) entries, drawn for W, H, B, C in that order.
    pub fn random(problem: &Problem, rank: usize, rng_seed: u64) -> Factors {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut draw = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.gen::<f64>());
        let (d, n) = problem.x.shape();
        let w = draw(d, rank);
        let h = draw(rank, n);
        let b = problem.y.map(|y| draw(rank, y.cols()));
        let c = problem.labels.map(|lab| draw(lab.z.rows(), rank));
        Factors { w, h, b, c }
    }

    pub fn rank(&self) -> usize {
        self.w.cols()
    }

    fn check_against(&self, problem: &Problem) -> Result<()> {
        let (d, n) = problem.x.shape();
        let k = self.w.cols();
        let expect = |op, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Shape {
                    op,
                    left: want,
                    right: got,
                })
            }
        };
        expect("factor W", self.w.shape(), (d, k))?;
        expect("factor H", self.h.shape(), (k, n))?;
        match (problem.y, &self.b) {
            (Some(y), Some(b)) => expect("factor B", b.shape(), (k, y.cols()))?,
            (None, None) => {}
            _ => {
                return Err(Error::InvalidInput(
                    "factor B present iff Y is supplied".into(),
                ))
            }
        }
        match (problem.labels, &self.c) {
            (Some(lab), Some(c)) => expect("factor C", c.shape(), (lab.z.rows(), k))?,
            (None, None) => {}
            _ => {
                return Err(Error::InvalidInput(
                    "factor C present iff labels are supplied".into(),
                ))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub reconstruction: f64,
    pub guiding: f64,
    pub label: f64,
}

/// Evaluates F and its three components. A term whose supervision is absent
/// contributes 0 and requires a zero weight.
pub fn objective(problem: &Problem, f: &Factors, lambda: f64, mu: f64) -> Result<LossTerms> {
    problem.check_weights(lambda, mu)?;
    let wh = matmul(&f.w, &f.h).map_err(|_| term_shape("reconstruction", &f.w, &f.h))?;
    let reconstruction = 0.5 * frobenius_sq(&problem.x.sub(&wh)?);

    let guiding = match (problem.y, &f.b) {
        (Some(y), Some(b)) => {
            let wb = matmul(&f.w, b).map_err(|_| term_shape("guiding", &f.w, b))?;
            0.5 * lambda * frobenius_sq(&y.sub(&wb).map_err(|_| term_shape("guiding", y, &wb))?)
        }
        _ => 0.0,
    };

    let label = match (problem.labels, &f.c) {
        (Some(LabelInputs { z, l }), Some(c)) => {
            let ch = matmul(c, &f.h).map_err(|_| term_shape("label", c, &f.h))?;
            let resid = z.sub(&ch).map_err(|_| term_shape("label", z, &ch))?;
            0.5 * mu * frobenius_sq(&hadamard(l, &resid)?)
        }
        _ => 0.0,
    };

    Ok(LossTerms {
        total: reconstruction + guiding + label,
        reconstruction,
        guiding,
        label,
    })
}

fn term_shape(term: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op: term,
        left: a.shape(),
        right: b.shape(),
    }
}

/// Partial derivatives of F with respect to each factor.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w: Matrix,
    pub h: Matrix,
    pub b: Option<Matrix>,
    pub c: Option<Matrix>,
}

/// Analytic gradient of F:
///
/// ```text
/// ∂F/∂W = −XHᵀ + WHHᵀ − λYBᵀ + λWBBᵀ
/// ∂F/∂H = −WᵀX + WᵀWH − μCᵀ(L⊙L⊙Z) + μCᵀ(L⊙L⊙CH)
/// ∂F/∂B = −λWᵀY + λWᵀWB
/// ∂F/∂C = −μ(L⊙L⊙Z)Hᵀ + μ(L⊙L⊙CH)Hᵀ
/// ```
pub fn gradients(problem: &Problem, f: &Factors, lambda: f64, mu: f64) -> Result<Gradients> {
    problem.check_weights(lambda, mu)?;
    f.check_against(problem)?;
    let wt = f.w.transpose();
    let ht = f.h.transpose();
    let wtw = matmul(&wt, &f.w)?;

    let mut gw = matmul(&f.w, &matmul(&f.h, &ht)?)?.sub(&matmul(problem.x, &ht)?)?;
    let mut gh = matmul(&wtw, &f.h)?.sub(&matmul(&wt, problem.x)?)?;
    let mut gb = None;
    let mut gc = None;

    if let (Some(y), Some(b)) = (problem.y, &f.b) {
        let bt = b.transpose();
        let fit = matmul(&f.w, &matmul(b, &bt)?)?.sub(&matmul(y, &bt)?)?;
        gw = gw.add(&fit.scale(lambda))?;
        gb = Some(matmul(&wtw, b)?.sub(&matmul(&wt, y)?)?.scale(lambda));
    }
    if let (Some(LabelInputs { z, l }), Some(c)) = (problem.labels, &f.c) {
        let ll = hadamard(l, l)?;
        let llz = hadamard(&ll, z)?;
        let llch = hadamard(&ll, &matmul(c, &f.h)?)?;
        let resid = llch.sub(&llz)?;
        gh = gh.add(&matmul(&c.transpose(), &resid)?.scale(mu))?;
        gc = Some(matmul(&resid, &ht)?.scale(mu));
    }
    Ok(Gradients {
        w: gw,
        h: gh,
        b: gb,
        c: gc,
    })
}

/// Precomputed L⊙L and L⊙L⊙Z.
struct MaskedLabels {
    ll: Matrix,
    llz: Matrix,
}

impl MaskedLabels {
    fn new(labels: LabelInputs) -> Result<Self> {
        let ll = hadamard(labels.l, labels.l)?;
        let llz = hadamard(&ll, labels.z)?;
        Ok(MaskedLabels { ll, llz })
    }
}

fn checked(m: Matrix, iteration: usize, factor: &'static str) -> Result<Matrix> {
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::Diverged { iteration, factor })
    }
}

fn apply_rule(factor: &Matrix, numer: &Matrix, denom: &Matrix, eps: f64) -> Result<Matrix> {
    hadamard(factor, &safe_divide(numer, denom, eps)?)
}

fn step(
    problem: &Problem,
    masked: Option<&MaskedLabels>,
    f: Factors,
    lambda: f64,
    mu: f64,
    eps: f64,
    iteration: usize,
) -> Result<Factors> {
    let x = problem.x;
    let Factors { w, h, b, c } = f;

    // W ← W ⊙ (XHᵀ + λYBᵀ) ⊘ (WHHᵀ + λWBBᵀ)
    let ht = h.transpose();
    let mut numer = matmul(x, &ht)?;
    let mut denom = matmul(&w, &matmul(&h, &ht)?)?;
    if let (Some(y), Some(b)) = (problem.y, &b) {
        let bt = b.transpose();
        numer = numer.add(&matmul(y, &bt)?.scale(lambda))?;
        denom = denom.add(&matmul(&w, &matmul(b, &bt)?)?.scale(lambda))?;
    }
    let w = checked(apply_rule(&w, &numer, &denom, eps)?, iteration, "W")?;

    // H ← H ⊙ (WᵀX + μCᵀ(L⊙L⊙Z)) ⊘ (WᵀWH + μCᵀ(L⊙L⊙CH))
    let wt = w.transpose();
    let wtw = matmul(&wt, &w)?;
    let mut numer = matmul(&wt, x)?;
    let mut denom = matmul(&wtw, &h)?;
    if let (Some(m), Some(c)) = (masked, &c) {
        let ct = c.transpose();
        numer = numer.add(&matmul(&ct, &m.llz)?.scale(mu))?;
        let llch = hadamard(&m.ll, &matmul(c, &h)?)?;
        denom = denom.add(&matmul(&ct, &llch)?.scale(mu))?;
    }
    let h = checked(apply_rule(&h, &numer, &denom, eps)?, iteration, "H")?;

    // B ← B ⊙ WᵀY ⊘ WᵀWB
    let b = match (problem.y, b) {
        (Some(y), Some(b)) => {
            let numer = matmul(&wt, y)?;
            let denom = matmul(&wtw, &b)?;
            Some(checked(
                apply_rule(&b, &numer, &denom, eps)?,
                iteration,
                "B",
            )?)
        }
        (_, b) => b,
    };

    // C ← C ⊙ (L⊙L⊙Z)Hᵀ ⊘ (L⊙L⊙CH)Hᵀ
    let c = match (masked, c) {
        (Some(m), Some(c)) => {
            let ht = h.transpose();
            let numer = matmul(&m.llz, &ht)?;
            let llch = hadamard(&m.ll, &matmul(&c, &h)?)?;
            let denom = matmul(&llch, &ht)?;
            Some(checked(
                apply_rule(&c, &numer, &denom, eps)?,
                iteration,
                "C",
            )?)
        }
        (_, c) => c,
    };

    Ok(Factors { w, h, b, c })
}

/// One full iteration (W, H, B, C rules). `iteration` only labels errors.
pub fn update_step(
    problem: &Problem,
    f: Factors,
    config: &ModelConfig,
    iteration: usize,
) -> Result<Factors> {
    config.validate()?;
    problem.validate()?;
    problem.check_weights(config.lambda, config.mu)?;
    f.check_against(problem)?;
    let masked = problem.labels.map(MaskedLabels::new).transpose()?;
    step(
        problem,
        masked.as_ref(),
        f,
        config.lambda,
        config.mu,
        config.eps,
        iteration,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationResult {
    pub factors: Factors,
    pub config: ModelConfig,
    pub kind: ModelKind,
    /// Objective at the initial factors.
    pub initial: LossTerms,
    /// Total objective after each iteration run.
    pub objective_trace: Vec<f64>,
    pub term_trace: Vec<LossTerms>,
}

impl FactorizationResult {
    pub fn iterations(&self) -> usize {
        self.objective_trace.len()
    }

    pub fn final_losses(&self) -> LossTerms {
        self.term_trace.last().copied().unwrap_or(self.initial)
    }

    /// Iterations (1-based) whose objective rose by more than `rel_slack`
    /// relative to the previous value.
    pub fn monotonicity_violations(&self, rel_slack: f64) -> Vec<usize> {
        let mut prev = self.initial.total;
        let mut bad = Vec::new();
        for (i, &f) in self.objective_trace.iter().enumerate() {
            if f > prev + rel_slack * prev.abs() {
                bad.push(i + 1);
            }
            prev = f;
        }
        bad
    }
}

/// Random initialization from `config.rng_seed`, then [`fit_from`].
pub fn fit(problem: &Problem, config: &ModelConfig) -> Result<FactorizationResult> {
    config.validate()?;
    let init = Factors::random(problem, config.rank, config.rng_seed);
    fit_from(problem, init, config)
}

pub fn fit_from(
    problem: &Problem,
    init: Factors,
    config: &ModelConfig,
) -> Result<FactorizationResult> {
    config.validate()?;
    problem.validate()?;
    problem.check_weights(config.lambda, config.mu)?;
    init.check_against(problem)?;
    if init.rank() != config.rank {
        return Err(Error::Config(format!(
            "initial factors have rank {}, config says {}",
            init.rank(),
            config.rank
        )));
    }
    let masked = problem.labels.map(MaskedLabels::new).transpose()?;

    let initial = objective(problem, &init, config.lambda, config.mu)?;
    let mut factors = init;
    let mut prev = initial.total;
    let mut objective_trace = Vec::with_capacity(config.max_iters);
    let mut term_trace = Vec::with_capacity(config.max_iters);
    for it in 1..=config.max_iters {
        factors = step(
            problem,
            masked.as_ref(),
            factors,
            config.lambda,
            config.mu,
            config.eps,
            it,
        )?;
        let terms = objective(problem, &factors, config.lambda, config.mu)?;
        objective_trace.push(terms.total);
        term_trace.push(terms);
        if config.tol > 0.0 && (terms.total - prev).abs() / prev.max(config.eps) < config.tol {
            break;
        }
        prev = terms.total;
    }

    Ok(FactorizationResult {
        factors,
        config: config.clone(),
        kind: ModelKind::from_weights(config.lambda, config.mu),
        initial,
        objective_trace,
        term_trace,
    })
}

/// The `n_top` terms with the largest weight in column `topic` of W, by
/// descending weight with lexicographic tie-break.
pub fn top_keywords(
    w: &Matrix,
    vocab: &Vocabulary,
    topic: usize,
    n_top: usize,
) -> Result<Vec<String>> {
    if w.rows() != vocab.len() {
        return Err(Error::InvalidInput(format!(
            "W has {} rows but the vocabulary has {} terms",
            w.rows(),
            vocab.len()
        )));
    }
    if topic >= w.cols() {
        return Err(Error::OutOfRange(format!("topic {topic} of {}", w.cols())));
    }
    if n_top > w.rows() {
        return Err(Error::OutOfRange(format!(
            "{n_top} keywords from a vocabulary of {}",
            w.rows()
        )));
    }
    let mut idx: Vec<usize> = (0..w.rows()).collect();
    idx.sort_by(|&a, &b| {
        w.get(b, topic)
            .total_cmp(&w.get(a, topic))
            .then_with(|| vocab.term(a).cmp(vocab.term(b)))
    });
    Ok(idx
        .into_iter()
        .take(n_top)
        .map(|i| vocab.term(i).to_string())
        .collect())
}

/// Run manifest written next to the factor files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub iterations: usize,
    pub initial_losses: LossTerms,
    pub final_losses: LossTerms,
    pub shapes: FactorShapes,
    /// Class name behind each row of C, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_names: Option<Vec<String>>,
    /// Stemmed seed word behind each column of B, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_words: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorShapes {
    pub w: (usize, usize),
    pub h: (usize, usize),
    pub b: Option<(usize, usize)>,
    pub c: Option<(usize, usize)>,
}

/// Writes `W.csv`, `H.csv`, optional `B.csv`/`C.csv`, `trace.csv` and
/// `manifest.json` into `dir`.
pub fn save_result(
    result: &FactorizationResult,
    dir: &Path,
    label_names: Option<&[String]>,
    seed_words: Option<&[String]>,
) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let f = &result.factors;
    f.w.save_csv(&dir.join("W.csv"))?;
    f.h.save_csv(&dir.join("H.csv"))?;
    for (name, m) in [("B.csv", &f.b), ("C.csv", &f.c)] {
        let path = dir.join(name);
        match m {
            Some(m) => m.save_csv(&path)?,
            None if path.exists() => fs::remove_file(&path).map_err(|e| Error::io(&path, e))?,
            None => {}
        }
    }

    let mut trace = String::from("iteration,total,reconstruction,guiding,label\n");
    for (i, t) in result.term_trace.iter().enumerate() {
        trace.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            i + 1,
            t.total,
            t.reconstruction,
            t.guiding,
            t.label
        ));
    }
    let trace_path = dir.join("trace.csv");
    fs::write(&trace_path, trace).map_err(|e| Error::io(&trace_path, e))?;

    let manifest = RunManifest {
        kind: result.kind,
        config: result.config.clone(),
        iterations: result.iterations(),
        initial_losses: result.initial,
        final_losses: result.final_losses(),
        shapes: FactorShapes {
            w: f.w.shape(),
            h: f.h.shape(),
            b: f.b.as_ref().map(Matrix::shape),
            c: f.c.as_ref().map(Matrix::shape),
        },
        label_names: label_names.map(<[String]>::to_vec),
        seed_words: seed_words.map(<[String]>::to_vec),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Factors and manifest of a saved run.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedRun {
    pub factors: Factors,
    pub manifest: RunManifest,
}

pub fn load_result(dir: &Path) -> Result<SavedRun> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))?;
    let load_opt = |name: &str, shape: Option<(usize, usize)>| -> Result<Option<Matrix>> {
        match shape {
            Some(_) => Matrix::load_csv(&dir.join(name)).map(Some),
            None => Ok(None),
        }
    };
    let factors = Factors {
        w: Matrix::load_csv(&dir.join("W.csv"))?,
        h: Matrix::load_csv(&dir.join("H.csv"))?,
        b: load_opt("B.csv", manifest.shapes.b)?,
        c: load_opt("C.csv", manifest.shapes.c)?,
    };
    let shapes = [
        ("W.csv", Some(factors.w.shape()), Some(manifest.shapes.w)),
        ("H.csv", Some(factors.h.shape()), Some(manifest.shapes.h)),
        (
            "B.csv",
            factors.b.as_ref().map(Matrix::shape),
            manifest.shapes.b,
        ),
        (
            "C.csv",
            factors.c.as_ref().map(Matrix::shape),
            manifest.shapes.c,
        ),
    ];
    for (name, got, want) in shapes {
        if got != want {
            return Err(Error::parse(
                dir.join(name),
                1,
                format!("shape {got:?} disagrees with manifest {want:?}"),
            ));
        }
    }
    Ok(SavedRun { factors, manifest })
}
