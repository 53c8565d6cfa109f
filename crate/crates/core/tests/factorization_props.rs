use gssnmf::factorization::{
    fit, fit_from, gradients, objective, update_step, Factors, ModelConfig, Problem,
};
use gssnmf::linalg::{matmul, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M = Vec<Vec<f64>>;

// Plain nested-vector kernels, written independently of the library.
fn to_m(a: &Matrix) -> M {
    (0..a.rows()).map(|i| a.row(i).to_vec()).collect()
}

fn mm(a: &M, b: &M) -> M {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn tr(a: &M) -> M {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

fn zip(a: &M, b: &M, f: impl Fn(f64, f64) -> f64) -> M {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect())
        .collect()
}

fn mult_update(f: &M, numer: &M, denom: &M, eps: f64) -> M {
    let q = zip(numer, denom, |n, d| n / (d + eps));
    zip(f, &q, |a, b| a * b)
}

struct Baseline {
    w: M,
    h: M,
    b: Option<M>,
    c: Option<M>,
}

const EPS: f64 = 1e-12;

fn classical_step(x: &M, s: &mut Baseline) {
    let ht = tr(&s.h);
    s.w = mult_update(&s.w, &mm(x, &ht), &mm(&s.w, &mm(&s.h, &ht)), EPS);
    let wt = tr(&s.w);
    s.h = mult_update(&s.h, &mm(&wt, x), &mm(&mm(&wt, &s.w), &s.h), EPS);
}

fn ssnmf_step(x: &M, z: &M, l: &M, mu: f64, s: &mut Baseline) {
    let ll = zip(l, l, |a, b| a * b);
    let llz = zip(&ll, z, |a, b| a * b);
    let ht = tr(&s.h);
    s.w = mult_update(&s.w, &mm(x, &ht), &mm(&s.w, &mm(&s.h, &ht)), EPS);
    let wt = tr(&s.w);
    let c = s.c.take().unwrap();
    let ct = tr(&c);
    let numer = zip(&mm(&wt, x), &mm(&ct, &llz), |a, b| a + mu * b);
    let llch = zip(&ll, &mm(&c, &s.h), |a, b| a * b);
    let denom = zip(&mm(&mm(&wt, &s.w), &s.h), &mm(&ct, &llch), |a, b| {
        a + mu * b
    });
    s.h = mult_update(&s.h, &numer, &denom, EPS);
    let ht = tr(&s.h);
    let llch = zip(&ll, &mm(&c, &s.h), |a, b| a * b);
    s.c = Some(mult_update(&c, &mm(&llz, &ht), &mm(&llch, &ht), EPS));
}

fn guided_step(x: &M, y: &M, lambda: f64, s: &mut Baseline) {
    let b = s.b.take().unwrap();
    let ht = tr(&s.h);
    let bt = tr(&b);
    let numer = zip(&mm(x, &ht), &mm(y, &bt), |a, c| a + lambda * c);
    let denom = zip(
        &mm(&s.w, &mm(&s.h, &ht)),
        &mm(&s.w, &mm(&b, &bt)),
        |a, c| a + lambda * c,
    );
    s.w = mult_update(&s.w, &numer, &denom, EPS);
    let wt = tr(&s.w);
    let wtw = mm(&wt, &s.w);
    s.h = mult_update(&s.h, &mm(&wt, x), &mm(&wtw, &s.h), EPS);
    s.b = Some(mult_update(&b, &mm(&wt, y), &mm(&wtw, &b), EPS));
}

struct Instance {
    x: Matrix,
    y: Matrix,
    z: Matrix,
    l: Matrix,
}

fn instance(d: usize, n: usize, s: usize, p: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(d, n, |_, _| rng.gen::<f64>());
    let seed_rows: Vec<usize> = (0..s).map(|_| rng.gen_range(0..d)).collect();
    let y = Matrix::from_fn(d, s, |i, j| if seed_rows[j] == i { 1.0 } else { 0.0 });
    let z = Matrix::from_fn(p, n, |_, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
    let train: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
    let l = Matrix::from_fn(p, n, |_, j| if train[j] { 1.0 } else { 0.0 });
    Instance { x, y, z, l }
}

fn assert_bitwise(label: &str, got: &Matrix, want: &M) {
    assert_eq!(&to_m(got), want, "{label} differs from baseline");
}

#[test]
fn lambda_zero_matches_ssnmf_bitwise() {
    let inst = instance(12, 9, 3, 3, 1);
    let problem = Problem::new(&inst.x)
        .with_seeds(&inst.y)
        .with_labels(&inst.z, &inst.l);
    let cfg = ModelConfig {
        rank: 4,
        lambda: 0.0,
        mu: 0.7,
        max_iters: 100,
        rng_seed: 11,
        ..ModelConfig::default()
    };
    let init = Factors::random(&problem, 4, 11);
    let mut base = Baseline {
        w: to_m(&init.w),
        h: to_m(&init.h),
        b: None,
        c: init.c.as_ref().map(to_m),
    };
    let r = fit_from(&problem, init, &cfg).unwrap();
    let (x, z, l) = (to_m(&inst.x), to_m(&inst.z), to_m(&inst.l));
    for _ in 0..100 {
        ssnmf_step(&x, &z, &l, 0.7, &mut base);
    }
    assert_bitwise("W", &r.factors.w, &base.w);
    assert_bitwise("H", &r.factors.h, &base.h);
    assert_bitwise("C", r.factors.c.as_ref().unwrap(), base.c.as_ref().unwrap());
}

#[test]
fn mu_zero_matches_guided_bitwise() {
    let inst = instance(12, 9, 3, 3, 2);
    let problem = Problem::new(&inst.x)
        .with_seeds(&inst.y)
        .with_labels(&inst.z, &inst.l);
    let cfg = ModelConfig {
        rank: 4,
        lambda: 0.4,
        mu: 0.0,
        max_iters: 100,
        rng_seed: 5,
        ..ModelConfig::default()
    };
    let init = Factors::random(&problem, 4, 5);
    let mut base = Baseline {
        w: to_m(&init.w),
        h: to_m(&init.h),
        b: init.b.as_ref().map(to_m),
        c: None,
    };
    let r = fit_from(&problem, init, &cfg).unwrap();
    let (x, y) = (to_m(&inst.x), to_m(&inst.y));
    for _ in 0..100 {
        guided_step(&x, &y, 0.4, &mut base);
    }
    assert_bitwise("W", &r.factors.w, &base.w);
    assert_bitwise("H", &r.factors.h, &base.h);
    assert_bitwise("B", r.factors.b.as_ref().unwrap(), base.b.as_ref().unwrap());
}

#[test]
fn both_zero_matches_classical_bitwise() {
    let inst = instance(10, 8, 2, 2, 3);
    let full = Problem::new(&inst.x)
        .with_seeds(&inst.y)
        .with_labels(&inst.z, &inst.l);
    let cfg = ModelConfig {
        rank: 3,
        max_iters: 100,
        rng_seed: 8,
        ..ModelConfig::default()
    };
    let init = Factors::random(&full, 3, 8);
    let mut base = Baseline {
        w: to_m(&init.w),
        h: to_m(&init.h),
        b: None,
        c: None,
    };
    let bare_init = Factors {
        w: init.w.clone(),
        h: init.h.clone(),
        b: None,
        c: None,
    };
    let r = fit_from(&full, init, &cfg).unwrap();
    let bare = fit_from(&Problem::new(&inst.x), bare_init, &cfg).unwrap();
    let x = to_m(&inst.x);
    for _ in 0..100 {
        classical_step(&x, &mut base);
    }
    assert_bitwise("W", &r.factors.w, &base.w);
    assert_bitwise("H", &r.factors.h, &base.h);
    assert_eq!(r.factors.w, bare.factors.w);
    assert_eq!(r.objective_trace, bare.objective_trace);
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..5 {
        let inst = instance(8, 6, 2, 2, 100 + seed);
        let problem = Problem::new(&inst.x)
            .with_seeds(&inst.y)
            .with_labels(&inst.z, &inst.l);
        let f = Factors::random(&problem, 3, seed);
        let g = gradients(&problem, &f, 0.7, 0.3).unwrap();
        let obj = |f: &Factors| objective(&problem, f, 0.7, 0.3).unwrap().total;
        let step = 1e-5;
        type Pick = fn(&mut Factors) -> &mut Matrix;
        let blocks: [(&str, Pick, &Matrix); 4] = [
            ("W", |f| &mut f.w, &g.w),
            ("H", |f| &mut f.h, &g.h),
            ("B", |f| f.b.as_mut().unwrap(), g.b.as_ref().unwrap()),
            ("C", |f| f.c.as_mut().unwrap(), g.c.as_ref().unwrap()),
        ];
        for (name, pick, analytic) in blocks {
            let mut err = 0.0;
            let mut norm = 0.0;
            let (r, c) = analytic.shape();
            for i in 0..r {
                for j in 0..c {
                    let mut plus = f.clone();
                    let v = pick(&mut plus).get(i, j);
                    pick(&mut plus).set(i, j, v + step);
                    let mut minus = f.clone();
                    pick(&mut minus).set(i, j, v - step);
                    let fd = (obj(&plus) - obj(&minus)) / (2.0 * step);
                    err += (fd - analytic.get(i, j)).powi(2);
                    norm += fd * fd;
                }
            }
            let rel = (err / norm).sqrt();
            assert!(rel < 1e-4, "seed {seed} {name}: relative error {rel:e}");
        }
    }
}

#[test]
fn stationary_point_is_a_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut rand_m = |r, c| Matrix::from_fn(r, c, |_, _| 0.2 + rng.gen::<f64>());
    let (d, n, k, s, p) = (7, 6, 3, 2, 2);
    let (w, h, b, c) = (rand_m(d, k), rand_m(k, n), rand_m(k, s), rand_m(p, k));
    let x = matmul(&w, &h).unwrap();
    let y = matmul(&w, &b).unwrap();
    let z = matmul(&c, &h).unwrap();
    let l = Matrix::from_fn(p, n, |_, j| if j % 3 == 0 { 0.0 } else { 1.0 });
    let problem = Problem::new(&x).with_seeds(&y).with_labels(&z, &l);
    let f = Factors {
        w,
        h,
        b: Some(b),
        c: Some(c),
    };
    let cfg = ModelConfig {
        rank: k,
        lambda: 0.6,
        mu: 0.4,
        ..ModelConfig::default()
    };
    let g = gradients(&problem, &f, cfg.lambda, cfg.mu).unwrap();
    for m in [&g.w, &g.h, g.b.as_ref().unwrap(), g.c.as_ref().unwrap()] {
        assert!(m.data().iter().all(|v| v.abs() < 1e-12));
    }
    let next = update_step(&problem, f.clone(), &cfg, 1).unwrap();
    let pairs = [
        (&f.w, &next.w),
        (&f.h, &next.h),
        (f.b.as_ref().unwrap(), next.b.as_ref().unwrap()),
        (f.c.as_ref().unwrap(), next.c.as_ref().unwrap()),
    ];
    for (before, after) in pairs {
        for (a, b) in before.data().iter().zip(after.data()) {
            assert!((a - b).abs() / a.abs() < 1e-8, "{a} -> {b}");
        }
    }
}

#[test]
fn fits_are_deterministic() {
    let inst = instance(15, 12, 2, 3, 9);
    let problem = Problem::new(&inst.x)
        .with_seeds(&inst.y)
        .with_labels(&inst.z, &inst.l);
    let cfg = ModelConfig {
        rank: 3,
        lambda: 0.2,
        mu: 0.3,
        max_iters: 50,
        rng_seed: 4,
        ..ModelConfig::default()
    };
    assert_eq!(fit(&problem, &cfg).unwrap(), fit(&problem, &cfg).unwrap());
}

#[test]
fn objective_decreases_on_random_problem() {
    let inst = instance(50, 40, 3, 3, 21);
    let problem = Problem::new(&inst.x)
        .with_seeds(&inst.y)
        .with_labels(&inst.z, &inst.l);
    let cfg = ModelConfig {
        rank: 5,
        lambda: 0.5,
        mu: 0.5,
        max_iters: 200,
        rng_seed: 1,
        ..ModelConfig::default()
    };
    let r = fit(&problem, &cfg).unwrap();
    assert_eq!(r.objective_trace.len(), 200);
    assert_eq!(r.monotonicity_violations(1e-9), Vec::<usize>::new());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn factors_stay_nonnegative_and_finite(
        seed in any::<u64>(),
        lambda in 0.0f64..2.0,
        mu in 0.0f64..2.0,
        sparsity in 0.0f64..0.8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(9, 7, |_, _| if rng.gen::<f64>() < sparsity { 0.0 } else { rng.gen::<f64>() * 5.0 });
        let inst = instance(9, 7, 2, 2, seed ^ 0x5eed);
        let problem = Problem::new(&x).with_seeds(&inst.y).with_labels(&inst.z, &inst.l);
        let cfg = ModelConfig { rank: 3, lambda, mu, max_iters: 40, rng_seed: seed, ..ModelConfig::default() };
        let r = fit(&problem, &cfg).unwrap();
        let f = &r.factors;
        for m in [&f.w, &f.h, f.b.as_ref().unwrap(), f.c.as_ref().unwrap()] {
            prop_assert!(m.is_finite() && m.is_nonnegative());
        }
        prop_assert!(r.monotonicity_violations(1e-9).is_empty());
    }
}
