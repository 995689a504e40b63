//! Reference implementations and seeded generators shared by the
//! integration suites. Nothing here calls into the code it checks: the
//! augmented layout, products and inverses are computed entry by entry.

#![allow(dead_code)]

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use specdiff::dtrace::{adam_minimize, dtrace_gradient, dtrace_loss, kronecker_oracle_solve, AdamConfig, DtraceProblem};
use specdiff::nll::JointProblem;
use specdiff::screening::screen;
use specdiff::tilde::realify;
use specdiff::{CMatrix, ClassLabel, RMatrix};

pub type C = Complex<f64>;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn normal(r: &mut ChaCha20Rng) -> f64 {
    r.sample(StandardNormal)
}

pub fn complex_matrix(r: &mut ChaCha20Rng, p: usize) -> CMatrix {
    CMatrix::from_fn(p, p, |_, _| C::new(normal(r), normal(r)))
}

pub fn hermitian(r: &mut ChaCha20Rng, p: usize) -> CMatrix {
    let a = complex_matrix(r, p);
    CMatrix::from_fn(p, p, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

/// `A A* / p + I`: Hermitian with eigenvalues at least one.
pub fn hpd(r: &mut ChaCha20Rng, p: usize) -> CMatrix {
    let a = complex_matrix(r, p);
    let mut m = naive_mul(&a, &a.adjoint());
    for v in m.iter_mut() {
        *v /= p as f64;
    }
    for i in 0..p {
        m[(i, i)] += 1.0;
    }
    m
}

/// `[[Re M, Im M], [-Im M, Re M]]`, written out entry by entry.
pub fn augment(m: &CMatrix) -> RMatrix {
    let p = m.nrows();
    RMatrix::from_fn(2 * p, 2 * p, |i, j| {
        let z = m[(i % p, j % p)];
        match (i < p, j < p) {
            (true, true) | (false, false) => z.re,
            (true, false) => z.im,
            (false, true) => -z.im,
        }
    })
}

pub fn naive_mul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (n, m, q) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = CMatrix::zeros(n, q);
    for i in 0..n {
        for j in 0..q {
            let mut s = C::new(0.0, 0.0);
            for l in 0..m {
                s += a[(i, l)] * b[(l, j)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn naive_inverse(m: &CMatrix) -> CMatrix {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = CMatrix::identity(n, n);
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[(x, col)].norm().total_cmp(&a[(y, col)].norm())).unwrap();
        a.swap_rows(col, piv);
        inv.swap_rows(col, piv);
        let d = a[(col, col)];
        assert!(d.norm() > 1e-14, "singular matrix");
        for j in 0..n {
            a[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[(i, col)];
                for j in 0..n {
                    let (aj, ij) = (a[(col, j)], inv[(col, j)]);
                    a[(i, j)] -= f * aj;
                    inv[(i, j)] -= f * ij;
                }
            }
        }
    }
    inv
}

pub fn max_abs(m: &RMatrix) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn fro(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn complex_max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Outcome of one acceptance suite.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

/// Unpenalized ADAM against the Kronecker solve on `count` seeded problems
/// with `2p <= 12`. The Kronecker solution is itself checked against the
/// inverse difference computed by Gauss-Jordan.
pub fn oracle_equivalence_suite(count: usize, tol: f64) -> Outcome {
    let cfg = AdamConfig {
        max_iters: 60_000,
        tol: 1e-11,
        ..AdamConfig::default()
    };
    let mut worst: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for seed in 0..count as u64 {
        let mut r = rng(1000 + seed);
        let p = 1 + (seed as usize % 6);
        let s1 = hpd(&mut r, p);
        let s2 = hpd(&mut r, p);
        let truth = augment(&(naive_inverse(&s2) - naive_inverse(&s1)));
        let prob = DtraceProblem::new(realify(&s1), realify(&s2), 0.0).unwrap();
        let oracle = kronecker_oracle_solve(prob.s1().as_matrix(), prob.s2().as_matrix()).unwrap();
        worst_oracle = worst_oracle.max(max_abs(&(&oracle - &truth)));
        let fit = adam_minimize(&prob, &cfg, None).unwrap();
        worst = worst.max(max_abs(&(fit.d.as_matrix() - &oracle)));
    }
    Outcome::new(
        worst < tol && worst_oracle < 1e-8,
        format!("{count} problems, max |ADAM - oracle| = {worst:.2e} (tol {tol:.0e}); oracle vs inverse difference {worst_oracle:.2e}"),
    )
}

/// Largest normwise relative gap between `analytic` and central
/// differences of `f` along symmetric unit perturbations `E_ij + E_ji`.
pub fn symmetric_fd_gap(d: &RMatrix, analytic: &RMatrix, h: f64, f: impl Fn(&RMatrix) -> f64) -> f64 {
    let n = d.nrows();
    let mut num = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let bump = |s: f64| {
                let mut e = d.clone();
                e[(i, j)] += s;
                if i != j {
                    e[(j, i)] += s;
                }
                e
            };
            let fd = (f(&bump(h)) - f(&bump(-h))) / (2.0 * h);
            let an = if i == j { analytic[(i, i)] } else { analytic[(i, j)] + analytic[(j, i)] };
            num = num.max((fd - an).abs());
            scale = scale.max(an.abs());
        }
    }
    num / scale.max(1e-300)
}

pub fn random_symmetric(r: &mut ChaCha20Rng, n: usize, scale: f64) -> RMatrix {
    let a = RMatrix::from_fn(n, n, |_, _| normal(r));
    (&a + a.transpose()) * (0.5 * scale)
}

pub fn dtrace_gradient_suite(count: usize, tol: f64) -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..count as u64 {
        let mut r = rng(2000 + seed);
        let p = 1 + (seed as usize % 5);
        let prob = DtraceProblem::new(realify(&hpd(&mut r, p)), realify(&hpd(&mut r, p)), 0.0).unwrap();
        let d = random_symmetric(&mut r, 2 * p, 1.0);
        let g = dtrace_gradient(&d, &prob).unwrap();
        worst = worst.max(symmetric_fd_gap(&d, &g, 1e-5, |x| dtrace_loss(x, &prob).unwrap()));
    }
    Outcome::new(worst < tol, format!("{count} toys, max relative error {worst:.2e} (tol {tol:.0e})"))
}

/// Random DFT data for the joint objective: `n` samples of `p x t_freq`.
pub fn joint_toy(r: &mut ChaCha20Rng, p: usize, t_freq: usize, n: usize) -> JointProblem {
    let dfts: Vec<CMatrix> = (0..n)
        .map(|_| CMatrix::from_fn(p, t_freq, |_, _| C::new(normal(r), normal(r)) * std::f64::consts::FRAC_1_SQRT_2))
        .collect();
    let labels = (0..n)
        .map(|j| if j % 2 == 0 { ClassLabel::One } else { ClassLabel::Two })
        .collect();
    JointProblem::from_dfts(&dfts, labels, 1).unwrap()
}

pub fn joint_gradient_suite(count: usize, tol: f64) -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..count as u64 {
        let mut r = rng(3000 + seed);
        let p = 1 + (seed as usize % 4);
        let t_freq = 2 + (seed as usize % 3);
        let prob = joint_toy(&mut r, p, t_freq, 8);
        let frames: Vec<RMatrix> = (0..t_freq).map(|_| augment(&hermitian(&mut r, p)) * 0.05).collect();
        let grads = prob.smooth_gradient_tilde(&frames).unwrap();
        for k in 0..t_freq {
            let gap = symmetric_fd_gap(&frames[k], &grads[k], 1e-5, |x| {
                let mut f = frames.clone();
                f[k] = x.clone();
                prob.smooth_objective_tilde(&f).unwrap()
            });
            worst = worst.max(gap);
        }
    }
    Outcome::new(worst < tol, format!("{count} toys, max relative error {worst:.2e} (tol {tol:.0e})"))
}

/// Homomorphism, inverse transport and norm transport on `count` random
/// matrices per size.
pub fn tilde_suite(sizes: &[usize], count: usize, tol: f64) -> Outcome {
    let mut hom: f64 = 0.0;
    let mut inv: f64 = 0.0;
    let mut fro_gap: f64 = 0.0;
    let mut inf_violation: f64 = 0.0;
    for &p in sizes {
        let mut r = rng(4000 + p as u64);
        for _ in 0..count {
            let a = complex_matrix(&mut r, p);
            let b = complex_matrix(&mut r, p);
            let prod = realify(&naive_mul(&a, &b));
            let ra = realify(&a);
            let rb = realify(&b);
            hom = hom.max(max_abs(&(prod.as_matrix() - ra.as_matrix() * rb.as_matrix())));
            assert_eq!(ra.as_matrix(), &augment(&a));

            let h = hpd(&mut r, p);
            let lhs = realify(&naive_inverse(&h));
            let rhs = realify(&h).as_matrix().clone().try_inverse().unwrap();
            inv = inv.max(max_abs(&(lhs.as_matrix() - rhs)));

            let diff = &a - &b;
            let rdiff = ra.as_matrix() - rb.as_matrix();
            let f = fro(&diff);
            fro_gap = fro_gap.max((f - rdiff.norm() / 2f64.sqrt()).abs() / f.max(1.0));
            inf_violation = inf_violation.max(complex_max_abs(&diff) - 2f64.sqrt() * max_abs(&rdiff));
        }
    }
    let pass = hom < tol && inv < tol && fro_gap < tol && inf_violation <= tol;
    Outcome::new(
        pass,
        format!(
            "sizes {sizes:?} x {count}: homomorphism {hom:.1e}, inverse {inv:.1e}, Frobenius {fro_gap:.1e}, max-norm bound slack {:.1e} (tol {tol:.0e})",
            -inf_violation
        ),
    )
}

/// Norms with `planted` large entries among `n` and tiny noise elsewhere.
pub fn planted_norms(r: &mut ChaCha20Rng, n: usize, planted: usize, noise: f64) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (1..=n).collect();
    for i in (1..n).rev() {
        let j = r.gen_range(0..=i);
        idx.swap(i, j);
    }
    let mut signal: Vec<usize> = idx[..planted].to_vec();
    signal.sort_unstable();
    let mut d = vec![0.0; n];
    for (k, v) in d.iter_mut().enumerate() {
        *v = if signal.binary_search(&(k + 1)).is_ok() {
            r.gen_range(0.05..5.0)
        } else if r.gen_bool(0.5) {
            r.gen_range(0.0..noise)
        } else {
            0.0
        };
    }
    (d, signal)
}

pub fn screening_suite(trials: usize) -> Outcome {
    let d = [0.01, 0.012, 0.011, 5.0, 6.0];
    let hand = screen(&d, 1, 4, 1e-12).unwrap();
    let hand_ok = hand.t0_hat == 3 && hand.selected == vec![4, 5];
    let mut contained = 0;
    for t in 0..trials as u64 {
        let mut r = rng(5000 + t);
        let (d, planted) = planted_norms(&mut r, 99, 20, 1e-6);
        let res = screen(&d, 1, 98, 1e-12).unwrap();
        if planted.iter().all(|k| res.selected.contains(k)) {
            contained += 1;
        }
    }
    Outcome::new(
        hand_ok && contained == trials,
        format!(
            "hand example T0 = {} selected {:?}; planted set contained in {contained}/{trials} trials",
            hand.t0_hat, hand.selected
        ),
    )
}
