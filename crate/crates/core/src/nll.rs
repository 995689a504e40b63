//! Whittle-likelihood discriminant, its logistic posterior, and joint
//! estimation of the difference stack by penalized cross-entropy.
//!
//! For a series with DFT `z_k` the Whittle log-likelihood ratio is
//!
//! ```text
//! L(z) = ln(pi1 / pi2) + sum_k [ z_k* D_k z_k - ln det(D_k S_1k + I) ]
//!      = ln(pi1 / pi2) + sum_k [ z~_k^T D~_k z~_k - 1/2 ln|D~_k S~_1k + I| ]
//! ```
//!
//! where the second line is the real augmented form used throughout (the
//! augmented determinant is the squared modulus of the complex one).

use std::borrow::Cow;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::dtrace::{dtrace_gradient, dtrace_loss, AdamConfig, AdamState, DifferenceStack, DtraceProblem, Split, SplitProblem};
use crate::error::{Error, Result};
use crate::par;
use crate::screening::{frobenius_norms, ScreeningResult};
use crate::spectral::{average_sdm_from_dfts, dft_matrix, ClassLabel, FourierGrid, MultivariateSeries};
use crate::tilde::{realify, realify_vector, RealAugmented};
use crate::{CMatrix, RMatrix};

/// Pivot magnitude below which `D~ S~ + I` counts as singular.
pub const SINGULAR_PIVOT: f64 = 1e-12;

/// Seed of the stream that draws minibatches in [`fit_joint`].
pub const MINIBATCH_SEED: u64 = 0x5eed_0001;

/// Seed of the stratified split in [`cv_select_lambda`].
pub const CV_SEED: u64 = 0x5eed_0002;

/// Class priors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub pi1: f64,
    pub pi2: f64,
}

impl Priors {
    pub fn new(pi1: f64, pi2: f64) -> Result<Self> {
        if !(pi1 > 0.0 && pi2 > 0.0) || (pi1 + pi2 - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!(
                "priors must be positive and sum to 1, got ({pi1}, {pi2})"
            )));
        }
        Ok(Priors { pi1, pi2 })
    }

    /// Empirical class frequencies.
    pub fn from_counts(n1: usize, n2: usize) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::input("both classes need at least one sample"));
        }
        let n = (n1 + n2) as f64;
        Priors::new(n1 as f64 / n, n2 as f64 / n)
    }

    pub fn from_labels(labels: &[ClassLabel]) -> Result<Self> {
        let n1 = labels.iter().filter(|l| **l == ClassLabel::One).count();
        Priors::from_counts(n1, labels.len() - n1)
    }

    pub fn log_ratio(&self) -> f64 {
        (self.pi1 / self.pi2).ln()
    }
}

/// `e^x / (1 + e^x)` without overflow.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Bernoulli cross-entropy `-sum_j { [Y_j = 1] L_j - ln(1 + e^{L_j}) }`.
pub fn cross_entropy(scores: &[f64], labels: &[ClassLabel]) -> f64 {
    scores
        .iter()
        .zip(labels)
        .map(|(&l, &y)| softplus(l) - if y == ClassLabel::One { l } else { 0.0 })
        .sum()
}

/// `ln |det m|` from an LU factorization, or `None` when a pivot is below
/// [`SINGULAR_PIVOT`].
pub fn log_abs_det(m: &RMatrix) -> Option<f64> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut total = 0.0;
    for i in 0..u.nrows() {
        let piv = u[(i, i)].abs();
        if !(piv >= SINGULAR_PIVOT) {
            return None;
        }
        total += piv.ln();
    }
    Some(total)
}

/// `1/2 ln|D~ S~ + I|`, the per-frequency log-determinant term.
fn half_log_det_term(d: &RealAugmented, s1: &RealAugmented, k: usize) -> Result<f64> {
    let n = d.dim();
    let m = d.as_matrix() * s1.as_matrix() + RMatrix::identity(n, n);
    log_abs_det(&m).map(|v| 0.5 * v).ok_or_else(|| Error::Evaluation {
        k,
        detail: "D S1 + I is singular".into(),
    })
}

/// Everything the discriminant needs: priors, class-1 spectra, the
/// difference stack and the frequencies that enter the sum.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorModel {
    priors: Priors,
    sdm1: Vec<RealAugmented>,
    stack: DifferenceStack,
    active: Vec<usize>,
    half_log_dets: Vec<f64>,
}

impl PosteriorModel {
    pub fn new(priors: Priors, sdm1: Vec<RealAugmented>, stack: DifferenceStack, mut active: Vec<usize>) -> Result<Self> {
        if sdm1.len() != stack.len() {
            return Err(Error::dim(format!(
                "{} class-1 spectra for {} difference frames",
                sdm1.len(),
                stack.len()
            )));
        }
        if sdm1.iter().any(|s| s.dim() != stack.get(1).dim()) {
            return Err(Error::dim("class-1 spectra and differences differ in order"));
        }
        active.sort_unstable();
        active.dedup();
        if let Some(&k) = active.iter().find(|&&k| k == 0 || k > stack.len()) {
            return Err(Error::input(format!("active frequency {k} outside 1..={}", stack.len())));
        }
        let half_log_dets = active
            .iter()
            .map(|&k| half_log_det_term(stack.get(k), &sdm1[k - 1], k))
            .collect::<Result<_>>()?;
        Ok(PosteriorModel {
            priors,
            sdm1,
            stack,
            active,
            half_log_dets,
        })
    }

    pub fn priors(&self) -> Priors {
        self.priors
    }

    pub fn sdm1(&self) -> &[RealAugmented] {
        &self.sdm1
    }

    pub fn stack(&self) -> &DifferenceStack {
        &self.stack
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn channels(&self) -> usize {
        self.stack.channels()
    }

    pub fn n_freq(&self) -> usize {
        self.stack.len()
    }

    /// Discriminant from a `p x T'` DFT matrix.
    pub fn discriminant_from_dft(&self, z: &CMatrix) -> Result<f64> {
        if z.nrows() != self.channels() || z.ncols() != self.n_freq() {
            return Err(Error::dim(format!(
                "DFT is {}x{}, model expects {}x{}",
                z.nrows(),
                z.ncols(),
                self.channels(),
                self.n_freq()
            )));
        }
        let mut total = self.priors.log_ratio();
        for (&k, &hld) in self.active.iter().zip(&self.half_log_dets) {
            let zt = realify_vector(&z.column(k - 1).into_owned());
            let quad = zt.dot(&(self.stack.get(k).as_matrix() * &zt));
            total += quad - hld;
        }
        Ok(total)
    }

    pub fn discriminant(&self, series: &MultivariateSeries, grid: &FourierGrid) -> Result<f64> {
        self.check_series(series, grid)?;
        self.discriminant_from_dft(&dft_matrix(series, grid)?)
    }

    /// Posterior probability of class 1.
    pub fn posterior(&self, series: &MultivariateSeries, grid: &FourierGrid) -> Result<f64> {
        Ok(logistic(self.discriminant(series, grid)?))
    }

    fn check_series(&self, series: &MultivariateSeries, grid: &FourierGrid) -> Result<()> {
        if series.channels() != self.channels() {
            return Err(Error::dim(format!(
                "series has {} channels, model expects {}",
                series.channels(),
                self.channels()
            )));
        }
        if grid.n_freq() != self.n_freq() {
            return Err(Error::dim(format!(
                "grid has {} frequencies, model expects {}",
                grid.n_freq(),
                self.n_freq()
            )));
        }
        grid.check_series(series)
    }
}

fn labels_of(samples: &[MultivariateSeries]) -> Result<Vec<ClassLabel>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| s.label().ok_or_else(|| Error::input(format!("sample {i} has no label"))))
        .collect()
}

/// Cross-entropy of the model's discriminant over labeled samples.
pub fn nll_loss(model: &PosteriorModel, samples: &[MultivariateSeries], grid: &FourierGrid) -> Result<f64> {
    let labels = labels_of(samples)?;
    let scores = par::try_map_slice(samples, |s| model.discriminant(s, grid))?;
    Ok(cross_entropy(&scores, &labels))
}

/// Training data for the joint objective: DFTs of every sample, class
/// spectra and priors.
pub struct JointProblem {
    p: usize,
    labels: Vec<ClassLabel>,
    priors: Priors,
    /// real and imaginary DFT parts per frequency, `p x n`
    zr: Vec<RMatrix>,
    zi: Vec<RMatrix>,
    zrt: Vec<RMatrix>,
    zit: Vec<RMatrix>,
    s1: Vec<RealAugmented>,
    s2: Vec<RealAugmented>,
    split: Vec<SplitProblem>,
    /// `(S1^{-1}, ln det S1)` where `S1` is numerically positive definite
    precision1: Vec<Option<(RMatrix, f64)>>,
}

impl JointProblem {
    pub fn new(samples: &[MultivariateSeries], grid: &FourierGrid, bandwidth: usize) -> Result<Self> {
        let labels = labels_of(samples)?;
        let dfts = par::try_map_slice(samples, |s| dft_matrix(s, grid))?;
        Self::from_dfts(&dfts, labels, bandwidth)
    }

    /// From precomputed `p x T'` DFT matrices.
    pub fn from_dfts(dfts: &[CMatrix], labels: Vec<ClassLabel>, bandwidth: usize) -> Result<Self> {
        if dfts.len() != labels.len() {
            return Err(Error::dim("one label per DFT required"));
        }
        let class = |c: ClassLabel| -> Vec<&CMatrix> {
            dfts.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(d, _)| d).collect()
        };
        let (c1, c2) = (class(ClassLabel::One), class(ClassLabel::Two));
        if c1.len() < 2 || c2.len() < 2 {
            return Err(Error::Estimation(format!(
                "each class needs at least 2 samples, found {} and {}",
                c1.len(),
                c2.len()
            )));
        }
        let s1: Vec<RealAugmented> = average_sdm_from_dfts(&c1, bandwidth)?.iter().map(realify).collect();
        let s2: Vec<RealAugmented> = average_sdm_from_dfts(&c2, bandwidth)?.iter().map(realify).collect();
        let (p, n_freq) = (dfts[0].nrows(), dfts[0].ncols());
        let n = dfts.len();
        let zr: Vec<RMatrix> = (0..n_freq)
            .map(|k| RMatrix::from_fn(p, n, |c, j| dfts[j][(c, k)].re))
            .collect();
        let zi: Vec<RMatrix> = (0..n_freq)
            .map(|k| RMatrix::from_fn(p, n, |c, j| dfts[j][(c, k)].im))
            .collect();
        let split = s1
            .iter()
            .zip(&s2)
            .map(|(a, b)| DtraceProblem::new(a.clone(), b.clone(), 0.0).map(|pr| SplitProblem::new(&pr)))
            .collect::<Result<_>>()?;
        // augmented inverses and ln det S1 (half the augmented log-determinant)
        let precision1 = par::map_slice(&s1, |s| {
            s.as_matrix().clone().cholesky().map(|ch| {
                let l = ch.l_dirty();
                let ld: f64 = (0..2 * p).map(|a| l[(a, a)].ln()).sum();
                (ch.inverse(), ld)
            })
        });
        Ok(JointProblem {
            p,
            precision1,
            priors: Priors::from_labels(&labels)?,
            labels,
            zrt: zr.iter().map(|m| m.transpose()).collect(),
            zit: zi.iter().map(|m| m.transpose()).collect(),
            zr,
            zi,
            s1,
            s2,
            split,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_freq(&self) -> usize {
        self.s1.len()
    }

    pub fn channels(&self) -> usize {
        self.p
    }

    pub fn priors(&self) -> Priors {
        self.priors
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn sdm1(&self) -> &[RealAugmented] {
        &self.s1
    }

    pub fn sdm2(&self) -> &[RealAugmented] {
        &self.s2
    }

    /// Per-frequency D-trace problems at `lambda`.
    pub fn dtrace_problems(&self, lambda: f64) -> Result<Vec<DtraceProblem>> {
        self.s1
            .iter()
            .zip(&self.s2)
            .map(|(a, b)| DtraceProblem::new(a.clone(), b.clone(), lambda))
            .collect()
    }

    fn z_tilde(&self, k: usize, j: usize) -> nalgebra::DVector<f64> {
        let p = self.p;
        nalgebra::DVector::from_fn(2 * p, |i, _| {
            if i < p {
                self.zr[k - 1][(i, j)]
            } else {
                -self.zi[k - 1][(i - p, j)]
            }
        })
    }

    fn check_frames(&self, frames: &[RMatrix]) -> Result<()> {
        if frames.len() != self.n_freq() || frames.iter().any(|f| f.shape() != (2 * self.p, 2 * self.p)) {
            return Err(Error::dim(format!(
                "expected {} frames of order {}",
                self.n_freq(),
                2 * self.p
            )));
        }
        Ok(())
    }

    /// Training discriminants for arbitrary (not necessarily block
    /// structured) symmetric augmented frames, all frequencies active.
    pub fn discriminants_tilde(&self, frames: &[RMatrix]) -> Result<Vec<f64>> {
        self.check_frames(frames)?;
        let n = 2 * self.p;
        let mut hld = Vec::with_capacity(frames.len());
        for (i, d) in frames.iter().enumerate() {
            let m = d * self.s1[i].as_matrix() + RMatrix::identity(n, n);
            hld.push(0.5 * log_abs_det(&m).ok_or(Error::Evaluation {
                k: i + 1,
                detail: "D S1 + I is singular".into(),
            })?);
        }
        Ok((0..self.n_samples())
            .map(|j| {
                let mut total = self.priors.log_ratio();
                for (i, d) in frames.iter().enumerate() {
                    let z = self.z_tilde(i + 1, j);
                    total += z.dot(&(d * &z)) - hld[i];
                }
                total
            })
            .collect())
    }

    /// Cross-entropy plus summed D-trace loss (no L1 term) on augmented frames.
    pub fn smooth_objective_tilde(&self, frames: &[RMatrix]) -> Result<f64> {
        let scores = self.discriminants_tilde(frames)?;
        let mut total = cross_entropy(&scores, &self.labels);
        for (i, d) in frames.iter().enumerate() {
            total += dtrace_loss(d, &DtraceProblem::new(self.s1[i].clone(), self.s2[i].clone(), 0.0)?)?;
        }
        Ok(total)
    }

    /// Gradient of [`Self::smooth_objective_tilde`] restricted to symmetric
    /// perturbations.
    pub fn smooth_gradient_tilde(&self, frames: &[RMatrix]) -> Result<Vec<RMatrix>> {
        let scores = self.discriminants_tilde(frames)?;
        let resid: Vec<f64> = scores
            .iter()
            .zip(&self.labels)
            .map(|(&l, &y)| logistic(l) - if y == ClassLabel::One { 1.0 } else { 0.0 })
            .collect();
        let rsum: f64 = resid.iter().sum();
        let n = 2 * self.p;
        frames
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let s1 = self.s1[i].as_matrix();
                let m = d * s1 + RMatrix::identity(n, n);
                let minv = m.try_inverse().ok_or(Error::Evaluation {
                    k: i + 1,
                    detail: "D S1 + I is singular".into(),
                })?;
                let sm = s1 * minv;
                let mut g = (&sm + sm.transpose()) * (-0.25 * rsum);
                for (j, r) in resid.iter().enumerate() {
                    let z = self.z_tilde(i + 1, j);
                    g += &z * z.transpose() * *r;
                }
                let prob = DtraceProblem::new(self.s1[i].clone(), self.s2[i].clone(), 0.0)?;
                Ok(g + dtrace_gradient(d, &prob)?)
            })
            .collect()
    }

    /// `ln|det(D S1 + I)|` and the Hermitian part of `S1 (D S1 + I)^{-1}`
    /// through the augmented LU. Used when `S1` is not invertible.
    fn log_det_via_lu(&self, i: usize, d: &Split) -> Result<(f64, Split)> {
        let p = self.p;
        let s1 = Split::from_tilde(&self.s1[i]);
        let mut ds = Split::zeros(p);
        Split::mul_into(d, &s1, &mut ds);
        let mut m = ds.to_tilde().into_matrix();
        for a in 0..2 * p {
            m[(a, a)] += 1.0;
        }
        let lu = m.lu();
        let mut log_det = 0.0;
        {
            let u = lu.u();
            for a in 0..2 * p {
                let piv = u[(a, a)].abs();
                if !(piv >= SINGULAR_PIVOT) {
                    return Err(singular(i + 1));
                }
                log_det += piv.ln();
            }
        }
        let minv = lu.try_inverse().ok_or_else(|| singular(i + 1))?;
        let sm = self.s1[i].as_matrix() * minv;
        // Hermitian part of S M^{-1}, read off the augmented blocks
        let g = Split {
            re: (sm.view((0, 0), (p, p)) + sm.view((0, 0), (p, p)).transpose()) * 0.5,
            im: (sm.view((0, p), (p, p)) - sm.view((0, p), (p, p)).transpose()) * 0.5,
        };
        Ok((0.5 * log_det, g))
    }

    /// Same quantities from `S1 (D S1 + I)^{-1} = (D + S1^{-1})^{-1}`, an
    /// inverse of a symmetric matrix instead of a general one. Cholesky is
    /// tried first and LU covers indefinite `D + S1^{-1}`.
    fn log_det_via_precision(&self, i: usize, d: &Split, theta: &RMatrix, log_det_s1: f64) -> Result<(f64, Split)> {
        let p = self.p;
        let h = d.to_tilde().into_matrix() + theta;
        let (log_det_h, inv) = match h.clone().cholesky() {
            Some(ch) => {
                let l = ch.l_dirty();
                let ld: f64 = (0..2 * p).map(|a| l[(a, a)].ln()).sum();
                (ld, spd_inverse_from_factor(l))
            }
            None => {
                let lu = h.lu();
                let mut ld = 0.0;
                {
                    let u = lu.u();
                    for a in 0..2 * p {
                        let piv = u[(a, a)].abs();
                        if !(piv >= SINGULAR_PIVOT) {
                            return Err(singular(i + 1));
                        }
                        ld += piv.ln();
                    }
                }
                (0.5 * ld, lu.try_inverse().ok_or_else(|| singular(i + 1))?)
            }
        };
        let tl = inv.view((0, 0), (p, p));
        let tr = inv.view((0, p), (p, p));
        let g = Split {
            re: (tl + tl.transpose()) * 0.5,
            im: (tr - tr.transpose()) * 0.5,
        };
        Ok((log_det_h + log_det_s1, g))
    }

    /// Per-frequency part of the split-form evaluation.
    fn eval_frequency(&self, i: usize, d: &Split, batch: Option<&[usize]>) -> Result<FreqEval> {
        let p = self.p;
        let (half_log_det, g_ld) = match &self.precision1[i] {
            Some((theta, ld)) => self.log_det_via_precision(i, d, theta, *ld)?,
            None => self.log_det_via_lu(i, d)?,
        };
        let (zr, zi) = self.batch_columns(i, batch);
        let (zr, zi) = (zr.as_ref(), zi.as_ref());
        let mut wr = &d.re * zr;
        wr.gemm(-1.0, &d.im, zi, 1.0);
        let mut wi = &d.re * zi;
        wi.gemm(1.0, &d.im, zr, 1.0);
        let q = (0..zr.ncols())
            .map(|j| zr.column(j).dot(&wr.column(j)) + zi.column(j).dot(&wi.column(j)))
            .collect();
        let mut scratch = [Split::zeros(p), Split::zeros(p)];
        let mut g_dt = Split::zeros(p);
        let dt_loss = self.split[i].loss_and_gradient(d, &mut scratch, &mut g_dt);
        Ok(FreqEval {
            half_log_det,
            q,
            g_ld,
            dt_loss,
            g_dt,
        })
    }

    fn batch_columns(&self, i: usize, batch: Option<&[usize]>) -> (Cow<'_, RMatrix>, Cow<'_, RMatrix>) {
        match batch {
            None => (Cow::Borrowed(&self.zr[i]), Cow::Borrowed(&self.zi[i])),
            Some(b) => (Cow::Owned(self.zr[i].select_columns(b)), Cow::Owned(self.zi[i].select_columns(b))),
        }
    }

    fn batch_transposes(&self, i: usize, batch: Option<&[usize]>) -> (Cow<'_, RMatrix>, Cow<'_, RMatrix>) {
        match batch {
            None => (Cow::Borrowed(&self.zrt[i]), Cow::Borrowed(&self.zit[i])),
            Some(b) => (Cow::Owned(self.zrt[i].select_rows(b)), Cow::Owned(self.zit[i].select_rows(b))),
        }
    }

    /// Smooth objective (cross-entropy scaled up from the batch, plus D-trace
    /// losses) and its gradient in split form. `d` must be Hermitian.
    fn evaluate_split(&self, d: &[Split], batch: Option<&[usize]>) -> Result<SplitEval> {
        let evals = par::try_map_indexed(self.n_freq(), |i| self.eval_frequency(i, &d[i], batch))?;
        let idx: Vec<usize> = match batch {
            None => (0..self.n_samples()).collect(),
            Some(b) => b.to_vec(),
        };
        let scale = self.n_samples() as f64 / idx.len() as f64;
        let log_ratio = self.priors.log_ratio();
        let mut nll = 0.0;
        let mut resid = Vec::with_capacity(idx.len());
        for (pos, &j) in idx.iter().enumerate() {
            let mut score = log_ratio;
            for e in &evals {
                score += e.q[pos] - e.half_log_det;
            }
            let y1 = self.labels[j] == ClassLabel::One;
            nll += softplus(score) - if y1 { score } else { 0.0 };
            resid.push(scale * (logistic(score) - if y1 { 1.0 } else { 0.0 }));
        }
        let rsum: f64 = resid.iter().sum();
        let r = nalgebra::DVector::from_vec(resid);
        let grads = par::map_indexed(self.n_freq(), |i| {
            let (zr, zi) = self.batch_columns(i, batch);
            let e = &evals[i];
            let zr_r = scale_columns(&zr, &r);
            let zi_r = scale_columns(&zi, &r);
            let (zrt, zit) = self.batch_transposes(i, batch);
            let mut g = Split::zeros(self.p);
            // 1/2 Z R Z*
            g.re.gemm(0.5, &zr_r, &zrt, 0.0);
            g.re.gemm(0.5, &zi_r, &zit, 1.0);
            g.im.gemm(0.5, &zi_r, &zrt, 0.0);
            g.im.gemm(-0.5, &zr_r, &zit, 1.0);
            g.re += &e.g_ld.re * (-0.5 * rsum) + &e.g_dt.re;
            g.im += &e.g_ld.im * (-0.5 * rsum) + &e.g_dt.im;
            g
        });
        let dtrace: f64 = evals.iter().map(|e| e.dt_loss).sum();
        Ok(SplitEval {
            smooth: scale * nll + dtrace,
            grads,
        })
    }
}

/// `(L L^T)^{-1}` from the lower Cholesky factor (upper triangle ignored).
fn spd_inverse_from_factor(l: &RMatrix) -> RMatrix {
    let n = l.nrows();
    // rows of L are the columns of its transpose, which keeps the inner
    // loop on contiguous memory
    let lt = l.transpose();
    let mut inv = RMatrix::zeros(n, n);
    for j in 0..n {
        let mut col = inv.column_mut(j);
        col[j] = 1.0 / lt[(j, j)];
        for i in j + 1..n {
            let row = lt.column(i);
            let mut acc = 0.0;
            for k in j..i {
                acc += row[k] * col[k];
            }
            col[i] = -acc / row[i];
        }
    }
    let mut out = RMatrix::zeros(n, n);
    out.gemm(1.0, &inv.transpose(), &inv, 0.0);
    out
}

fn singular(k: usize) -> Error {
    Error::Evaluation {
        k,
        detail: "D S1 + I is singular".into(),
    }
}

fn scale_columns(m: &RMatrix, r: &nalgebra::DVector<f64>) -> RMatrix {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= r[j];
    }
    out
}

struct FreqEval {
    half_log_det: f64,
    q: Vec<f64>,
    g_ld: Split,
    dt_loss: f64,
    g_dt: Split,
}

struct SplitEval {
    smooth: f64,
    grads: Vec<Split>,
}

/// Result of [`fit_joint`].
#[derive(Clone, Debug)]
pub struct JointFit {
    pub stack: DifferenceStack,
    /// Penalized objective at the start of each iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Steps whose learning rate had to be halved.
    pub backtracks: usize,
}

const MAX_BACKTRACKS: usize = 5;

/// Minimizes cross-entropy + sum of D-trace losses + `lambda` times the
/// summed L1 norms over all frequencies jointly, with the same ADAM and
/// proximal step as [`crate::dtrace::adam_minimize`]. The cross-entropy
/// gradient is projected onto the real augmented layout so iterates stay
/// images of Hermitian matrices. A step that makes some `D~ S~ + I`
/// singular is retried with half the learning rate, at most 5 times.
pub fn fit_joint(problem: &JointProblem, lambda: f64, cfg: &AdamConfig, init: Option<&DifferenceStack>) -> Result<JointFit> {
    cfg.validate()?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::input(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let p = problem.p;
    let mut d: Vec<Split> = match init {
        Some(s) => {
            if s.len() != problem.n_freq() || s.channels() != p {
                return Err(Error::dim("warm start does not match the problem"));
            }
            s.to_split()
        }
        None => problem
            .dtrace_problems(0.0)?
            .iter()
            .map(|pr| pr.diagonal_init().map(|m| Split::from_tilde(&m)))
            .collect::<Result<_>>()?,
    };
    for f in d.iter_mut() {
        f.hermitize();
    }
    let n = problem.n_samples();
    let batch_size = cfg.minibatch.map(|b| b.min(n)).filter(|&b| b < n);
    let mut rng = ChaCha20Rng::seed_from_u64(MINIBATCH_SEED);
    let mut draw = move || -> Option<Vec<usize>> {
        batch_size.map(|b| {
            let mut v = sample_indices(&mut rng, n, b).into_vec();
            v.sort_unstable();
            v
        })
    };
    let l1 = |d: &[Split]| -> f64 { d.iter().map(Split::tilde_l1).sum() };

    let mut states: Vec<AdamState> = (0..d.len()).map(|_| AdamState::new(p)).collect();
    let mut batch = draw();
    let mut current = problem.evaluate_split(&d, batch.as_deref())?;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut backtracks = 0;
    for iter in 1..=cfg.max_iters {
        let objective = current.smooth + lambda * l1(&d);
        if !objective.is_finite() {
            return Err(Error::Divergence {
                iteration: iter,
                detail: format!("objective became {objective}"),
            });
        }
        history.push(objective);
        let next_batch = draw();
        let mut lr = cfg.learning_rate;
        let mut attempt = 0;
        let (next, change, eval) = loop {
            let saved: Vec<(Split, Split, usize)> = states.iter().map(|s| (s.m.clone(), s.v.clone(), s.t)).collect();
            let mut next: Vec<Split> = (0..d.len()).map(|_| Split::zeros(p)).collect();
            let mut change: f64 = 0.0;
            for (i, st) in states.iter_mut().enumerate() {
                change = change.max(st.step(cfg, lr, lambda, &d[i], &current.grads[i], &mut next[i]));
            }
            match problem.evaluate_split(&next, next_batch.as_deref()) {
                Ok(eval) => break (next, change, eval),
                Err(Error::Evaluation { k, detail }) => {
                    if attempt == MAX_BACKTRACKS {
                        return Err(Error::Divergence {
                            iteration: iter,
                            detail: format!("step stays singular at k={k} after {MAX_BACKTRACKS} halvings: {detail}"),
                        });
                    }
                    for (st, (m, v, t)) in states.iter_mut().zip(saved) {
                        st.m = m;
                        st.v = v;
                        st.t = t;
                    }
                    attempt += 1;
                    backtracks += 1;
                    lr *= 0.5;
                }
                Err(other) => return Err(other),
            }
        };
        d = next;
        current = eval;
        batch = next_batch;
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
    let _ = batch;
    Ok(JointFit {
        stack: DifferenceStack::from_split(&d),
        history,
        iterations,
        converged,
        backtracks,
    })
}

/// Convenience wrapper building the [`JointProblem`] from labeled samples.
pub fn fit_joint_samples(
    samples: &[MultivariateSeries],
    grid: &FourierGrid,
    bandwidth: usize,
    lambda: f64,
    cfg: &AdamConfig,
) -> Result<JointFit> {
    fit_joint(&JointProblem::new(samples, grid, bandwidth)?, lambda, cfg, None)
}

/// Splits sample indices into two halves per class after a seeded shuffle.
/// The first half of each class (rounded down) goes to training.
pub fn stratified_halves(labels: &[ClassLabel], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for class in [ClassLabel::One, ClassLabel::Two] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        let half = idx.len() / 2;
        if half == 0 || idx.len() - half == 0 {
            return Err(Error::input(format!(
                "class {class} has {} samples; both halves need at least one",
                idx.len()
            )));
        }
        train.extend_from_slice(&idx[..half]);
        valid.extend_from_slice(&idx[half..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}

/// Screens a stack, treating an all-zero stack as having no signal.
pub fn screen_stack(stack: &DifferenceStack, t_min: usize, t_max: usize, floor: f64) -> Result<ScreeningResult> {
    let d = frobenius_norms(stack);
    if d.iter().all(|v| *v == 0.0) {
        let n = d.len();
        let mut r = ScreeningResult::keep_all(d);
        r.selected.clear();
        r.t0_hat = n;
        return Ok(r);
    }
    crate::screening::screen(&d, t_min, t_max, floor)
}

/// Screening bounds used while tuning and fitting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenConfig {
    /// `None` means 1.
    pub t_min: Option<usize>,
    /// `None` means `T' - 1`.
    pub t_max: Option<usize>,
    pub floor: f64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig {
            t_min: None,
            t_max: None,
            floor: crate::screening::DEFAULT_FLOOR,
        }
    }
}

impl ScreenConfig {
    pub fn bounds(&self, n_freq: usize) -> (usize, usize) {
        (self.t_min.unwrap_or(1), self.t_max.unwrap_or(n_freq.saturating_sub(1)))
    }

    pub fn apply(&self, stack: &DifferenceStack) -> Result<ScreeningResult> {
        let (lo, hi) = self.bounds(stack.len());
        screen_stack(stack, lo, hi, self.floor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub lambda: f64,
    pub validation_error: f64,
    pub selected: usize,
}

#[derive(Clone, Debug)]
pub struct CvSelection {
    pub lambda: f64,
    /// Joint fit on all samples at the chosen `lambda`.
    pub fit: JointFit,
    pub path: Vec<CvPoint>,
}

/// Picks `lambda` by validation misclassification on a stratified 50/50
/// split (screening included, ties to the larger `lambda`) and refits on all
/// samples.
pub fn cv_select_lambda(
    samples: &[MultivariateSeries],
    grid: &FourierGrid,
    bandwidth: usize,
    lambda_grid: &[f64],
    cfg: &AdamConfig,
    screen: &ScreenConfig,
    seed: u64,
) -> Result<CvSelection> {
    if samples.len() < 4 {
        return Err(Error::input(format!("cross-validation needs at least 4 samples, got {}", samples.len())));
    }
    if lambda_grid.is_empty() || lambda_grid.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::input("lambda grid must be nonempty with positive values"));
    }
    let labels = labels_of(samples)?;
    let dfts = par::try_map_slice(samples, |s| dft_matrix(s, grid))?;
    let (train, valid) = stratified_halves(&labels, seed)?;
    let pick = |idx: &[usize]| -> (Vec<CMatrix>, Vec<ClassLabel>) {
        (idx.iter().map(|&i| dfts[i].clone()).collect(), idx.iter().map(|&i| labels[i]).collect())
    };
    let (train_dfts, train_labels) = pick(&train);
    let problem = JointProblem::from_dfts(&train_dfts, train_labels, bandwidth)?;
    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(|a, b| b.total_cmp(a));
    lambdas.dedup();

    let mut path = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    let mut warm: Option<DifferenceStack> = None;
    for &lambda in &lambdas {
        let fit = fit_joint(&problem, lambda, cfg, warm.as_ref())?;
        let screening = screen.apply(&fit.stack)?;
        let model = PosteriorModel::new(problem.priors(), problem.sdm1().to_vec(), fit.stack.clone(), screening.selected.clone())?;
        let mut wrong = 0usize;
        for &j in &valid {
            let score = model.discriminant_from_dft(&dfts[j])?;
            let predicted = if score > 0.0 { ClassLabel::One } else { ClassLabel::Two };
            wrong += usize::from(predicted != labels[j]);
        }
        let err = wrong as f64 / valid.len() as f64;
        path.push(CvPoint {
            lambda,
            validation_error: err,
            selected: screening.selected.len(),
        });
        // lambdas arrive in decreasing order, so only a strict improvement moves down
        if best.map_or(true, |(_, e)| err < e) {
            best = Some((lambda, err));
        }
        warm = Some(fit.stack);
    }
    let (lambda, _) = best.expect("grid is nonempty");
    let full = JointProblem::from_dfts(&dfts, labels, bandwidth)?;
    let fit = fit_joint(&full, lambda, cfg, None)?;
    Ok(CvSelection { lambda, fit, path })
}
