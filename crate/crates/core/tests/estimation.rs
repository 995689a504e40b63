mod common;

use common::*;
use proptest::prelude::*;
use specdiff::dtrace::{
    adam_minimize, dtrace_gradient, dtrace_loss, fit_stack, kronecker_oracle_solve, AdamConfig, DtraceProblem,
};
use specdiff::nll::{logistic, PosteriorModel, Priors};
use specdiff::tilde::{realify, RealAugmented};
use specdiff::{CMatrix, DifferenceStack, RMatrix};

fn problem(seed: u64, p: usize, lambda: f64) -> DtraceProblem {
    let mut r = rng(seed);
    DtraceProblem::new(realify(&hpd(&mut r, p)), realify(&hpd(&mut r, p)), lambda).unwrap()
}

fn trace(m: &RMatrix) -> f64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

/// `tr(D S1 D S2) / 2 - tr(D (S1 - S2))`.
fn loss_oracle(d: &RMatrix, prob: &DtraceProblem) -> f64 {
    let (s1, s2) = (prob.s1().as_matrix(), prob.s2().as_matrix());
    0.5 * trace(&(d * s1 * d * s2)) - trace(&(d * (s1 - s2)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_matches_trace_formula(seed in any::<u64>(), p in 1usize..6) {
        let prob = problem(seed, p, 0.0);
        let mut r = rng(seed ^ 1);
        let d = random_symmetric(&mut r, 2 * p, 1.0);
        let got = dtrace_loss(&d, &prob).unwrap();
        let want = loss_oracle(&d, &prob);
        prop_assert!((got - want).abs() < 1e-10 * want.abs().max(1.0));
    }

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), p in 1usize..6) {
        let prob = problem(seed, p, 0.0);
        let mut r = rng(seed ^ 2);
        let d = random_symmetric(&mut r, 2 * p, 1.0);
        let g = dtrace_gradient(&d, &prob).unwrap();
        prop_assert!(symmetric_fd_gap(&d, &g, 1e-5, |x| loss_oracle(x, &prob)) < 1e-5);
    }

    #[test]
    fn oracle_solution_is_stationary(seed in any::<u64>(), p in 1usize..6) {
        let prob = problem(seed, p, 0.0);
        let d = kronecker_oracle_solve(prob.s1().as_matrix(), prob.s2().as_matrix()).unwrap();
        prop_assert!(max_abs(&dtrace_gradient(&d, &prob).unwrap()) < 1e-8);
    }

    #[test]
    fn loss_is_convex_along_segments(seed in any::<u64>(), p in 1usize..6, t in 0.05f64..0.95) {
        let prob = problem(seed, p, 0.0);
        let mut r = rng(seed ^ 3);
        let a = random_symmetric(&mut r, 2 * p, 2.0);
        let b = random_symmetric(&mut r, 2 * p, 2.0);
        let h = 0.04;
        let at = |s: f64| dtrace_loss(&(&a * (1.0 - s) + &b * s), &prob).unwrap();
        let second = at(t - h) - 2.0 * at(t) + at(t + h);
        prop_assert!(second >= -1e-10);
    }

    #[test]
    fn logistic_stays_inside_the_unit_interval(a in -30.0f64..30.0, b in -30.0f64..30.0) {
        let (pa, pb) = (logistic(a), logistic(b));
        prop_assert!(pa > 0.0 && pa < 1.0);
        if a < b {
            prop_assert!(pa <= pb);
        }
    }
}

#[test]
fn prox_output_meets_subgradient_condition() {
    let cfg = AdamConfig {
        max_iters: 40_000,
        tol: 1e-11,
        ..AdamConfig::default()
    };
    for seed in 0..6 {
        let p = 2 + seed as usize % 3;
        let lambda = 0.05;
        let prob = problem(100 + seed, p, lambda);
        let fit = adam_minimize(&prob, &cfg, None).unwrap();
        let g = dtrace_gradient(fit.d.as_matrix(), &prob).unwrap();
        // the tilde L1 norm counts each complex entry in two blocks, and the
        // symmetric gradient pairs (i, j) with (j, i); compare on the layout
        for (i, &di) in fit.d.as_matrix().iter().enumerate() {
            let gi = g.as_slice()[i];
            if di == 0.0 {
                assert!(gi.abs() <= lambda + 1e-3, "seed {seed}: zero entry with gradient {gi}");
            } else {
                assert!((gi + lambda * di.signum()).abs() <= 1e-3, "seed {seed}: {gi} vs {}", -lambda * di.signum());
            }
        }
    }
}

#[test]
fn support_shrinks_as_penalty_grows() {
    let problems: Vec<DtraceProblem> = (0..4).map(|k| problem(200 + k, 3, 0.0)).collect();
    let cfg = AdamConfig {
        max_iters: 20_000,
        tol: 1e-10,
        ..AdamConfig::default()
    };
    let mut last = usize::MAX;
    for lambda in [0.001, 0.01, 0.03, 0.1, 0.3, 1.0, 100.0] {
        let (stack, _) = fit_stack(&problems, lambda, &cfg, None).unwrap();
        let nnz = stack.total_nnz();
        assert!(nnz <= last.saturating_add(1), "lambda {lambda}: {nnz} > {last}");
        last = nnz;
    }
    assert_eq!(last, 0);
}

#[test]
fn unpenalized_adam_matches_kronecker_oracle() {
    let out = oracle_equivalence_suite(20, 1e-4);
    assert!(out.pass, "{}", out.detail);
}

#[test]
fn gradient_suites() {
    let d = dtrace_gradient_suite(20, 1e-4);
    assert!(d.pass, "{}", d.detail);
    let j = joint_gradient_suite(20, 1e-4);
    assert!(j.pass, "{}", j.detail);
}

fn exact_difference_model(seed: u64, p: usize, n_freq: usize) -> (Vec<CMatrix>, Vec<CMatrix>, Vec<CMatrix>) {
    let mut r = rng(seed);
    let s1: Vec<CMatrix> = (0..n_freq).map(|_| hpd(&mut r, p)).collect();
    let s2: Vec<CMatrix> = (0..n_freq).map(|_| hpd(&mut r, p)).collect();
    let d = s1.iter().zip(&s2).map(|(a, b)| naive_inverse(b) - naive_inverse(a)).collect();
    (s1, s2, d)
}

fn augmented(ms: &[CMatrix]) -> Vec<RealAugmented> {
    ms.iter().map(realify).collect()
}

#[test]
fn swapping_classes_negates_the_discriminant() {
    let (p, n_freq) = (3, 4);
    for seed in 0..10 {
        let (s1, s2, d) = exact_difference_model(300 + seed, p, n_freq);
        let stack = DifferenceStack::new(augmented(&d)).unwrap();
        let priors = Priors::new(0.5, 0.5).unwrap();
        let active: Vec<usize> = (1..=n_freq).collect();
        let fwd = PosteriorModel::new(priors, augmented(&s1), stack.clone(), active.clone()).unwrap();
        let rev = PosteriorModel::new(priors, augmented(&s2), stack.negated(), active).unwrap();
        let mut r = rng(400 + seed);
        for _ in 0..5 {
            let z = CMatrix::from_fn(p, n_freq, |_, _| C::new(normal(&mut r), normal(&mut r)));
            let a = fwd.discriminant_from_dft(&z).unwrap();
            let b = rev.discriminant_from_dft(&z).unwrap();
            assert!((a + b).abs() < 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn zero_frames_do_not_change_the_discriminant() {
    let (p, n_freq) = (2, 5);
    let (s1, _, mut d) = exact_difference_model(500, p, n_freq);
    d[1] = CMatrix::zeros(p, p);
    d[3] = CMatrix::zeros(p, p);
    let stack = DifferenceStack::new(augmented(&d)).unwrap();
    let priors = Priors::new(0.3, 0.7).unwrap();
    let base = PosteriorModel::new(priors, augmented(&s1), stack.clone(), vec![1, 3, 5]).unwrap();
    let wide = PosteriorModel::new(priors, augmented(&s1), stack, vec![1, 2, 3, 4, 5]).unwrap();
    let mut r = rng(501);
    for _ in 0..20 {
        let z = CMatrix::from_fn(p, n_freq, |_, _| C::new(normal(&mut r), normal(&mut r)));
        assert_eq!(
            base.discriminant_from_dft(&z).unwrap().to_bits(),
            wide.discriminant_from_dft(&z).unwrap().to_bits()
        );
    }
}

#[test]
fn discriminant_is_the_whittle_log_ratio() {
    // ln(pi1 f1 / pi2 f2) for complex Gaussians with covariances S1, S2:
    // ln(pi1/pi2) + sum_k [z*(S2^-1 - S1^-1)z - ln det(S1) + ln det(S2)]
    let (p, n_freq) = (3, 3);
    let (s1, s2, d) = exact_difference_model(600, p, n_freq);
    let priors = Priors::new(0.4, 0.6).unwrap();
    let model = PosteriorModel::new(priors, augmented(&s1), DifferenceStack::new(augmented(&d)).unwrap(), vec![1, 2, 3]).unwrap();
    let mut r = rng(601);
    let z = CMatrix::from_fn(p, n_freq, |_, _| C::new(normal(&mut r), normal(&mut r)));
    let mut want = (0.4f64 / 0.6).ln();
    for k in 0..n_freq {
        let zk = z.column(k).into_owned();
        let quad = (zk.adjoint() * &d[k] * &zk)[(0, 0)].re;
        want += quad - s1[k].determinant().re.ln() + s2[k].determinant().re.ln();
    }
    let got = model.discriminant_from_dft(&z).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}
