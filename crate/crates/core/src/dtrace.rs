//! Lasso-penalized D-trace estimation of `Theta_2 - Theta_1` from two
//! spectral density estimates, one frequency at a time.
//!
//! The loss on a symmetric `D` is
//!
//! ```text
//! L(D) = 1/4 (<S1 D, D S2> + <S2 D, D S1>) - <D, S1 - S2>
//! ```
//!
//! with `<A, B> = trace(A B^T)`; its minimizer solves
//! `(S1 D S2 + S2 D S1) / 2 = S1 - S2`, i.e. `D = S2^{-1} - S1^{-1}`.
//! The penalized problem `L(D) + lambda ||D||_1` is minimized by ADAM with a
//! soft-thresholding step after every update.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tilde::{is_symmetric, RealAugmented};
use crate::RMatrix;

/// Tolerance for the symmetry checks on inputs and stacks.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// The two spectral estimates at one frequency and the L1 weight.
#[derive(Clone, Debug, PartialEq)]
pub struct DtraceProblem {
    s1: RealAugmented,
    s2: RealAugmented,
    lambda: f64,
}

impl DtraceProblem {
    pub fn new(s1: RealAugmented, s2: RealAugmented, lambda: f64) -> Result<Self> {
        if s1.dim() != s2.dim() {
            return Err(Error::dim(format!(
                "S1 is {0}x{0} but S2 is {1}x{1}",
                s1.dim(),
                s2.dim()
            )));
        }
        if !is_symmetric(s1.as_matrix(), SYMMETRY_TOL) || !is_symmetric(s2.as_matrix(), SYMMETRY_TOL) {
            return Err(Error::input("S1 and S2 must be symmetric"));
        }
        check_lambda(lambda)?;
        Ok(DtraceProblem { s1, s2, lambda })
    }

    pub fn s1(&self) -> &RealAugmented {
        &self.s1
    }

    pub fn s2(&self) -> &RealAugmented {
        &self.s2
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.s1.dim()
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(DtraceProblem {
            lambda,
            ..self.clone()
        })
    }

    /// `diag(S2)^{-1} - diag(S1)^{-1}`.
    pub fn diagonal_init(&self) -> Result<RealAugmented> {
        let n = self.dim();
        let mut d = RMatrix::zeros(n, n);
        for i in 0..n {
            let (a, b) = (self.s1.as_matrix()[(i, i)], self.s2.as_matrix()[(i, i)]);
            if a <= 0.0 || b <= 0.0 {
                return Err(Error::numeric(format!(
                    "nonpositive spectral diagonal at index {i} ({a:e}, {b:e})"
                )));
            }
            d[(i, i)] = 1.0 / b - 1.0 / a;
        }
        RealAugmented::from_matrix(d)
    }

    fn check_dim(&self, d: &RMatrix) -> Result<()> {
        let n = self.dim();
        if d.nrows() != n || d.ncols() != n {
            return Err(Error::dim(format!(
                "D is {}x{}, problem is {n}x{n}",
                d.nrows(),
                d.ncols()
            )));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::input(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Smooth part of the objective (no L1 term).
pub fn dtrace_loss(d: &RMatrix, prob: &DtraceProblem) -> Result<f64> {
    prob.check_dim(d)?;
    let (s1, s2) = (prob.s1.as_matrix(), prob.s2.as_matrix());
    let quad = (s1 * d).dot(&(d * s2)) + (s2 * d).dot(&(d * s1));
    Ok(0.25 * quad - d.dot(&(s1 - s2)))
}

/// `(S1 D S2 + S2 D S1) / 2 - (S1 - S2)`.
pub fn dtrace_gradient(d: &RMatrix, prob: &DtraceProblem) -> Result<RMatrix> {
    prob.check_dim(d)?;
    let (s1, s2) = (prob.s1.as_matrix(), prob.s2.as_matrix());
    Ok((s1 * d * s2 + s2 * d * s1) * 0.5 - (s1 - s2))
}

#[inline]
pub(crate) fn soft(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Entrywise `sign(x) max(|x| - tau, 0)`.
pub fn soft_threshold(x: &RMatrix, tau: f64) -> Result<RMatrix> {
    if !(tau >= 0.0) {
        return Err(Error::input(format!("threshold must be >= 0, got {tau}")));
    }
    Ok(x.map(|v| soft(v, tau)))
}

/// Solves `(S2 (x) S1 + S1 (x) S2) / 2 vec(D) = vec(S1 - S2)` densely.
/// Intended for small symmetric inputs (order at most 16).
pub fn kronecker_oracle_solve(s1: &RMatrix, s2: &RMatrix) -> Result<RMatrix> {
    let n = s1.nrows();
    if !s1.is_square() || s1.shape() != s2.shape() {
        return Err(Error::dim("S1 and S2 must be square and equally sized"));
    }
    if n > 16 {
        return Err(Error::input(format!("oracle limited to order 16, got {n}")));
    }
    let system = (s2.kronecker(s1) + s1.kronecker(s2)) * 0.5;
    let rhs = DVector::from_column_slice((s1 - s2).as_slice());
    let lu = system.lu();
    let pivots = lu.u().diagonal().abs();
    if pivots.min() <= 1e-12 * pivots.max().max(f64::MIN_POSITIVE) {
        return Err(Error::numeric("Kronecker system is singular"));
    }
    let x = lu
        .solve(&rhs)
        .ok_or_else(|| Error::numeric("Kronecker system is singular"))?;
    Ok(RMatrix::from_column_slice(n, n, x.as_slice()))
}

/// ADAM hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub delta: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Samples per stochastic step of the joint objective; `None` uses all.
    /// Ignored by the per-frequency D-trace fit, whose loss has no sample sum.
    pub minibatch: Option<usize>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            delta: 1e-8,
            max_iters: 2000,
            tol: 1e-7,
            minibatch: None,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::input("learning rate must be positive"));
        }
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::input("beta1 and beta2 must lie in (0, 1)"));
        }
        if !(self.delta > 0.0) || !(self.tol > 0.0) {
            return Err(Error::input("delta and tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::input("max_iters must be positive"));
        }
        if self.minibatch == Some(0) {
            return Err(Error::input("minibatch size must be positive"));
        }
        Ok(())
    }
}

/// A Hermitian `p x p` matrix held as real and imaginary parts, so that the
/// optimizer can work on `p x p` products instead of `2p x 2p` ones. The
/// real augmented image has `re` on the diagonal blocks and `im` top right.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Split {
    pub re: RMatrix,
    pub im: RMatrix,
}

impl Split {
    pub fn zeros(p: usize) -> Self {
        Split {
            re: RMatrix::zeros(p, p),
            im: RMatrix::zeros(p, p),
        }
    }

    pub fn from_tilde(m: &RealAugmented) -> Self {
        let p = m.half_dim();
        let a = m.as_matrix();
        Split {
            re: a.view((0, 0), (p, p)).into_owned(),
            im: a.view((0, p), (p, p)).into_owned(),
        }
    }

    pub fn to_tilde(&self) -> RealAugmented {
        let p = self.re.nrows();
        let mut out = RMatrix::zeros(2 * p, 2 * p);
        out.view_mut((0, 0), (p, p)).copy_from(&self.re);
        out.view_mut((p, p), (p, p)).copy_from(&self.re);
        out.view_mut((0, p), (p, p)).copy_from(&self.im);
        out.view_mut((p, 0), (p, p)).copy_from(&(-&self.im));
        RealAugmented::from_matrix(out).expect("layout is exact by construction")
    }

    pub fn dim(&self) -> usize {
        self.re.nrows()
    }

    /// `out = a * b` in complex arithmetic.
    pub fn mul_into(a: &Split, b: &Split, out: &mut Split) {
        out.re.gemm(1.0, &a.re, &b.re, 0.0);
        out.re.gemm(-1.0, &a.im, &b.im, 1.0);
        out.im.gemm(1.0, &a.re, &b.im, 0.0);
        out.im.gemm(1.0, &a.im, &b.re, 1.0);
    }

    /// `Re trace(self * other)` for Hermitian `other`.
    pub fn re_trace_with_hermitian(&self, other: &Split) -> f64 {
        self.re.dot(&other.re) + self.im.dot(&other.im)
    }

    /// Projects onto Hermitian matrices.
    pub fn hermitize(&mut self) {
        let p = self.dim();
        for j in 0..p {
            self.im[(j, j)] = 0.0;
            for i in (j + 1)..p {
                let r = 0.5 * (self.re[(i, j)] + self.re[(j, i)]);
                self.re[(i, j)] = r;
                self.re[(j, i)] = r;
                let m = 0.5 * (self.im[(i, j)] - self.im[(j, i)]);
                self.im[(i, j)] = m;
                self.im[(j, i)] = -m;
            }
        }
    }

    /// L1 norm of the real augmented image.
    pub fn tilde_l1(&self) -> f64 {
        2.0 * (self.re.iter().map(|v| v.abs()).sum::<f64>() + self.im.iter().map(|v| v.abs()).sum::<f64>())
    }

    pub fn max_abs_diff(&self, other: &Split) -> f64 {
        let r = self.re.iter().zip(other.re.iter()).map(|(a, b)| (a - b).abs());
        let i = self.im.iter().zip(other.im.iter()).map(|(a, b)| (a - b).abs());
        r.chain(i).fold(0.0, f64::max)
    }
}

/// A problem in split form with scratch space for the triple product.
pub(crate) struct SplitProblem {
    pub s1: Split,
    pub s2: Split,
    /// `S1 - S2`
    pub diff: Split,
}

impl SplitProblem {
    pub fn new(prob: &DtraceProblem) -> Self {
        let s1 = Split::from_tilde(&prob.s1);
        let s2 = Split::from_tilde(&prob.s2);
        let diff = Split {
            re: &s1.re - &s2.re,
            im: &s1.im - &s2.im,
        };
        SplitProblem { s1, s2, diff }
    }

    /// Writes the gradient of the real augmented loss (as a Hermitian split
    /// matrix) into `grad` and returns the loss. `d` must be Hermitian.
    pub fn loss_and_gradient(&self, d: &Split, scratch: &mut [Split; 2], grad: &mut Split) -> f64 {
        let [x, y] = scratch;
        Split::mul_into(&self.s1, d, x);
        Split::mul_into(x, &self.s2, y);
        let loss = y.re_trace_with_hermitian(d) - 2.0 * self.diff.re_trace_with_hermitian(d);
        let p = d.dim();
        for j in 0..p {
            for i in 0..p {
                grad.re[(i, j)] = 0.5 * (y.re[(i, j)] + y.re[(j, i)]) - self.diff.re[(i, j)];
                grad.im[(i, j)] = 0.5 * (y.im[(i, j)] - y.im[(j, i)]) - self.diff.im[(i, j)];
            }
        }
        loss
    }

    pub fn loss(&self, d: &Split) -> f64 {
        let p = d.dim();
        let mut scratch = [Split::zeros(p), Split::zeros(p)];
        let mut grad = Split::zeros(p);
        self.loss_and_gradient(d, &mut scratch, &mut grad)
    }
}

/// First and second moment estimates of one ADAM run.
pub(crate) struct AdamState {
    pub m: Split,
    pub v: Split,
    pub t: usize,
}

impl AdamState {
    pub fn new(p: usize) -> Self {
        AdamState {
            m: Split::zeros(p),
            v: Split::zeros(p),
            t: 0,
        }
    }

    /// One ADAM step with learning rate `lr` followed by the proximal map of
    /// `lambda ||.||_1` in the metric ADAM uses, written into `next`
    /// (Hermitized). Returns the largest parameter change.
    pub fn step(&mut self, cfg: &AdamConfig, lr: f64, lambda: f64, d: &Split, grad: &Split, next: &mut Split) -> f64 {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let parts = [
            (d.re.as_slice(), grad.re.as_slice(), self.m.re.as_mut_slice(), self.v.re.as_mut_slice(), next.re.as_mut_slice()),
            (d.im.as_slice(), grad.im.as_slice(), self.m.im.as_mut_slice(), self.v.im.as_mut_slice(), next.im.as_mut_slice()),
        ];
        for (x, g, m, v, out) in parts {
            for i in 0..x.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let den = cfg.delta + (v[i] / c2).sqrt();
                out[i] = soft(x[i] - lr * (m[i] / c1) / den, lr * lambda / den);
            }
        }
        next.hermitize();
        next.max_abs_diff(d)
    }
}

/// Result of one penalized D-trace minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamFit {
    pub d: RealAugmented,
    /// Penalized objective `L(D) + lambda ||D||_1` at the start of each iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) struct SplitFit {
    pub d: Split,
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn adam_split(prob: &SplitProblem, lambda: f64, cfg: &AdamConfig, init: Split) -> Result<SplitFit> {
    let p = init.dim();
    let mut d = init;
    d.hermitize();
    let mut next = Split::zeros(p);
    let mut grad = Split::zeros(p);
    let mut scratch = [Split::zeros(p), Split::zeros(p)];
    let mut state = AdamState::new(p);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=cfg.max_iters {
        let loss = prob.loss_and_gradient(&d, &mut scratch, &mut grad);
        let objective = loss + lambda * d.tilde_l1();
        if !objective.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                detail: format!("objective became {objective}"),
            });
        }
        history.push(objective);
        let change = state.step(cfg, cfg.learning_rate, lambda, &d, &grad, &mut next);
        std::mem::swap(&mut d, &mut next);
        iterations = iter;
        if !change.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                detail: "parameter update is not finite".into(),
            });
        }
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(SplitFit {
        d,
        history,
        iterations,
        converged,
    })
}

/// Minimizes `L(D) + lambda ||D||_1` by ADAM with a proximal step.
///
/// Each iteration takes the bias-corrected ADAM step, soft-thresholds every
/// entry by `learning_rate * lambda / (delta + sqrt(v_hat))` (the proximal map
/// of the L1 term in ADAM's diagonal metric, which is what produces exact
/// zeros), and symmetrizes. Iterates stay in the real augmented layout, so
/// the result is a valid image of a Hermitian matrix. Stops when the largest
/// entry change drops below `tol` or after `max_iters`.
pub fn adam_minimize(prob: &DtraceProblem, cfg: &AdamConfig, init: Option<&RealAugmented>) -> Result<AdamFit> {
    cfg.validate()?;
    let start = match init {
        Some(m) => {
            prob.check_dim(m.as_matrix())?;
            m.clone()
        }
        None => prob.diagonal_init()?,
    };
    let fit = adam_split(&SplitProblem::new(prob), prob.lambda, cfg, Split::from_tilde(&start))?;
    Ok(AdamFit {
        d: fit.d.to_tilde(),
        history: fit.history,
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

/// Estimated differences `D_k` for `k = 1..=T'`, in real augmented form.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceStack {
    frames: Vec<RealAugmented>,
}

impl DifferenceStack {
    pub fn new(frames: Vec<RealAugmented>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::input("difference stack needs at least one frequency"));
        };
        let n = first.dim();
        for (i, f) in frames.iter().enumerate() {
            if f.dim() != n {
                return Err(Error::dim(format!("frame k={} has order {}, expected {n}", i + 1, f.dim())));
            }
            if !is_symmetric(f.as_matrix(), SYMMETRY_TOL) {
                return Err(Error::Structure(format!("frame k={} is not symmetric", i + 1)));
            }
        }
        Ok(DifferenceStack { frames })
    }

    pub fn zeros(p: usize, n_freq: usize) -> Self {
        DifferenceStack {
            frames: vec![RealAugmented::zeros(p); n_freq],
        }
    }

    /// Number of frequencies `T'`.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Number of channels `p`.
    pub fn channels(&self) -> usize {
        self.frames[0].half_dim()
    }

    /// Frame at 1-based frequency index `k`.
    pub fn get(&self, k: usize) -> &RealAugmented {
        &self.frames[k - 1]
    }

    pub fn set(&mut self, k: usize, frame: RealAugmented) -> Result<()> {
        if frame.dim() != self.frames[0].dim() {
            return Err(Error::dim("replacement frame has the wrong order"));
        }
        if !is_symmetric(frame.as_matrix(), SYMMETRY_TOL) {
            return Err(Error::Structure(format!("frame k={k} is not symmetric")));
        }
        self.frames[k - 1] = frame;
        Ok(())
    }

    pub fn frames(&self) -> &[RealAugmented] {
        &self.frames
    }

    /// `(k, frame)` pairs with 1-based `k`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &RealAugmented)> {
        self.frames.iter().enumerate().map(|(i, f)| (i + 1, f))
    }

    pub fn nnz(&self, k: usize) -> usize {
        self.get(k).as_matrix().iter().filter(|v| **v != 0.0).count()
    }

    pub fn total_nnz(&self) -> usize {
        (1..=self.len()).map(|k| self.nnz(k)).sum()
    }

    /// Positions `(i, j)` of the nonzero entries of the frame at `k`.
    pub fn support(&self, k: usize) -> Vec<(usize, usize)> {
        let m = self.get(k).as_matrix();
        let n = m.nrows();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| m[(i, j)] != 0.0)
            .collect()
    }

    pub fn negated(&self) -> Self {
        DifferenceStack {
            frames: self
                .frames
                .iter()
                .map(|f| RealAugmented::from_matrix(-f.as_matrix()).expect("negation keeps the layout"))
                .collect(),
        }
    }

    pub(crate) fn to_split(&self) -> Vec<Split> {
        self.frames.iter().map(Split::from_tilde).collect()
    }

    pub(crate) fn from_split(frames: &[Split]) -> Self {
        DifferenceStack {
            frames: frames.iter().map(Split::to_tilde).collect(),
        }
    }
}

/// Per-frequency fits at one `lambda`, warm-started from `init` when given.
pub fn fit_stack(
    problems: &[DtraceProblem],
    lambda: f64,
    cfg: &AdamConfig,
    init: Option<&DifferenceStack>,
) -> Result<(DifferenceStack, Vec<usize>)> {
    cfg.validate()?;
    check_lambda(lambda)?;
    if let Some(s) = init {
        if s.len() != problems.len() {
            return Err(Error::dim("warm start has the wrong number of frequencies"));
        }
    }
    let fits = par::try_map_indexed(problems.len(), |i| {
        let prob = &problems[i];
        let start = match init {
            Some(s) => Split::from_tilde(s.get(i + 1)),
            None => Split::from_tilde(&prob.diagonal_init()?),
        };
        adam_split(&SplitProblem::new(prob), lambda, cfg, start).map_err(|e| match e {
            Error::Divergence { iteration, detail } => Error::Divergence {
                iteration,
                detail: format!("frequency k={}: {detail}", i + 1),
            },
            other => other,
        })
    })?;
    let iterations = fits.iter().map(|f| f.iterations).collect();
    let frames: Vec<Split> = fits.into_iter().map(|f| f.d).collect();
    Ok((DifferenceStack::from_split(&frames), iterations))
}

/// Log-spaced grid of `n` values from `lo` to `hi`, ascending.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Twenty log-spaced values in `[1e-10, 1]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-10, 1.0, 20)
}

/// Weight of `||D_k||_0` in the information criterion:
/// `ln(ln n) ln(p^2) / n`.
pub fn gic_penalty_weight(n: usize, p: usize) -> f64 {
    let n = n as f64;
    n.ln().ln() * ((p * p) as f64).ln() / n
}

/// `sum_k L(D_k) + gic_penalty_weight(n, p) * sum_k ||D_k||_0`.
pub fn gic_value(stack: &DifferenceStack, problems: &[DtraceProblem], n: usize) -> Result<f64> {
    if stack.len() != problems.len() {
        return Err(Error::dim("stack and problem list differ in length"));
    }
    let w = gic_penalty_weight(n, stack.channels());
    let mut total = 0.0;
    for (k, frame) in stack.iter() {
        total += dtrace_loss(frame.as_matrix(), &problems[k - 1])? + w * stack.nnz(k) as f64;
    }
    Ok(total)
}

/// One evaluated point of the tuning path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GicPoint {
    pub lambda: f64,
    pub score: f64,
    pub loss: f64,
    pub nnz: usize,
    pub max_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct GicSelection {
    pub lambda: f64,
    pub score: f64,
    pub stack: DifferenceStack,
    /// Evaluated points in the order they were fitted.
    pub path: Vec<GicPoint>,
}

fn split_loss_sum(stack: &DifferenceStack, split_problems: &[SplitProblem]) -> f64 {
    stack
        .frames()
        .iter()
        .zip(split_problems)
        .map(|(f, sp)| sp.loss(&Split::from_tilde(f)))
        .sum()
}

fn check_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::input("lambda grid is empty"));
    }
    if grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::input("lambda grid values must be positive and finite"));
    }
    let mut g = grid.to_vec();
    g.sort_by(|a, b| b.total_cmp(a));
    g.dedup();
    Ok(g)
}

fn gic_path(
    problems: &[DtraceProblem],
    grid_desc: &[f64],
    n: usize,
    cfg: &AdamConfig,
    init: Option<&DifferenceStack>,
    best: &mut Option<(f64, f64, DifferenceStack)>,
    path: &mut Vec<GicPoint>,
) -> Result<()> {
    let split_problems: Vec<SplitProblem> = problems.iter().map(SplitProblem::new).collect();
    let w = gic_penalty_weight(n, problems[0].dim() / 2);
    let mut warm = init.cloned();
    for &lambda in grid_desc {
        let (stack, iters) = fit_stack(problems, lambda, cfg, warm.as_ref())?;
        let loss = split_loss_sum(&stack, &split_problems);
        let nnz = stack.total_nnz();
        let score = loss + w * nnz as f64;
        path.push(GicPoint {
            lambda,
            score,
            loss,
            nnz,
            max_iterations: iters.iter().copied().max().unwrap_or(0),
        });
        let better = match best {
            None => true,
            Some((bl, bs, _)) => score < *bs || (score == *bs && lambda > *bl),
        };
        if better {
            *best = Some((lambda, score, stack.clone()));
        }
        warm = Some(stack);
    }
    Ok(())
}

fn check_problems(problems: &[DtraceProblem], n: usize) -> Result<()> {
    if problems.is_empty() {
        return Err(Error::input("no frequencies to fit"));
    }
    if n < 2 {
        return Err(Error::input(format!("sample count must be at least 2, got {n}")));
    }
    let dim = problems[0].dim();
    if problems.iter().any(|p| p.dim() != dim) {
        return Err(Error::dim("frequency problems differ in order"));
    }
    Ok(())
}

/// Fits every frequency at each `lambda` (largest first, warm-starting each
/// fit from the previous one) and keeps the `lambda` with the smallest
/// information criterion, preferring the larger `lambda` on exact ties.
pub fn gic_select(problems: &[DtraceProblem], lambda_grid: &[f64], n: usize, cfg: &AdamConfig) -> Result<GicSelection> {
    check_problems(problems, n)?;
    let grid = check_grid(lambda_grid)?;
    let mut best = None;
    let mut path = Vec::new();
    gic_path(problems, &grid, n, cfg, None, &mut best, &mut path)?;
    let (lambda, score, stack) = best.expect("grid is nonempty");
    Ok(GicSelection {
        lambda,
        score,
        stack,
        path,
    })
}

/// [`gic_select`] on `coarse_grid`, then `refine` more log-spaced values
/// strictly between the grid neighbours of the winner, warm-started from it.
pub fn gic_select_refined(
    problems: &[DtraceProblem],
    coarse_grid: &[f64],
    refine: usize,
    n: usize,
    cfg: &AdamConfig,
) -> Result<GicSelection> {
    let coarse = gic_select(problems, coarse_grid, n, cfg)?;
    let grid = check_grid(coarse_grid)?;
    if refine == 0 || grid.len() < 2 {
        return Ok(coarse);
    }
    let pos = grid.iter().position(|&l| l == coarse.lambda).expect("winner is on the grid");
    let hi = grid[pos.saturating_sub(1)];
    let lo = grid[(pos + 1).min(grid.len() - 1)];
    let fine: Vec<f64> = log_grid(lo, hi, refine + 2)[1..=refine]
        .iter()
        .rev()
        .copied()
        .filter(|l| !grid.contains(l))
        .collect();
    let mut best = Some((coarse.lambda, coarse.score, coarse.stack.clone()));
    let mut path = coarse.path;
    gic_path(problems, &fine, n, cfg, Some(&coarse.stack), &mut best, &mut path)?;
    let (lambda, score, stack) = best.expect("coarse winner present");
    Ok(GicSelection {
        lambda,
        score,
        stack,
        path,
    })
}
