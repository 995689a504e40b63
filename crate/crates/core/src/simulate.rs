//! Synthetic two-class populations with banded differences of inverse
//! spectral density matrices, sampled in the frequency domain.

use std::collections::BTreeSet;

use nalgebra::{Cholesky, Complex};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::spectral::{ClassLabel, FourierGrid, MultivariateSeries};
use crate::tilde::{is_hermitian, min_eigenvalue_hermitian, realify};
use crate::{CMatrix, CVector, RMatrix};

/// Identifies the random stream layout, written into dataset metadata.
pub const GENERATOR_ID: &str = "ChaCha20 (rand_chacha 0.3) seeded by seed_from_u64(seed), stream = sample index";

/// Smallest eigenvalue accepted for a constructed inverse SDM.
pub const MIN_EIGENVALUE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub p: usize,
    /// Series length `T`.
    pub t: usize,
    pub n1: usize,
    pub n2: usize,
    /// 1-based frequency indices where the classes differ.
    pub signal_band: Vec<usize>,
    pub seed: u64,
    /// Multiple of the identity added to both inverse SDMs. The banded
    /// pattern alone is indefinite from `p = 4` on; the shift leaves the
    /// difference between classes untouched.
    pub loading: f64,
}

impl SimDesign {
    pub const DEFAULT_LOADING: f64 = 1.0;

    pub fn new(p: usize, t: usize, n1: usize, n2: usize, signal_band: Vec<usize>, seed: u64) -> Self {
        SimDesign {
            p,
            t,
            n1,
            n2,
            signal_band,
            seed,
            loading: Self::DEFAULT_LOADING,
        }
    }

    /// `n1 = n2 = 100`, `p = 32`, `T = 200`, band `1..=20`.
    pub fn example1(seed: u64) -> Self {
        Self::new(32, 200, 100, 100, (1..=20).collect(), seed)
    }

    /// As [`SimDesign::example1`] with `p = 64`.
    pub fn example2(seed: u64) -> Self {
        Self::new(64, 200, 100, 100, (1..=20).collect(), seed)
    }

    /// Desk-scale variant: `n1 = n2 = 30`, `p = 16`, `T = 128`, band `1..=10`.
    pub fn scaled(seed: u64) -> Self {
        Self::new(16, 128, 30, 30, (1..=10).collect(), seed)
    }

    pub fn grid(&self) -> Result<FourierGrid> {
        FourierGrid::new(self.t)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        if self.p == 0 {
            return Err(Error::input("p must be positive"));
        }
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::input("both classes need at least one sample"));
        }
        if let Some(k) = self.signal_band.iter().find(|&&k| k == 0 || k > grid.n_freq()) {
            return Err(Error::input(format!(
                "signal frequency {k} outside 1..={}",
                grid.n_freq()
            )));
        }
        if !(self.loading.is_finite() && self.loading >= 0.0) {
            return Err(Error::input("loading must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn in_band(&self, k: usize) -> bool {
        self.signal_band.contains(&k)
    }
}

/// Class-1 pattern: real part `0.5^|i-j|`, imaginary part
/// `0.5^|i-j| (-1)^[j > i] - [i = j]`.
fn theta1_pattern(p: usize) -> CMatrix {
    CMatrix::from_fn(p, p, |i, j| {
        let base = 0.5f64.powi(i.abs_diff(j) as i32);
        let sign = if j > i { -1.0 } else { 1.0 };
        let diag = if i == j { 1.0 } else { 0.0 };
        Complex::new(base, base * sign - diag)
    })
}

/// Inverse SDM of `class` at frequency index `k`. Class 2 flips the sign of
/// the first off-diagonals inside the signal band and equals class 1
/// elsewhere.
pub fn build_theta(design: &SimDesign, class: ClassLabel, k: usize) -> Result<CMatrix> {
    let n_freq = design.grid()?.n_freq();
    if k == 0 || k > n_freq {
        return Err(Error::input(format!("frequency index {k} outside 1..={n_freq}")));
    }
    let p = design.p;
    let mut theta = theta1_pattern(p);
    if class == ClassLabel::Two && design.in_band(k) {
        for j in 0..p {
            for i in 0..p {
                if i.abs_diff(j) == 1 {
                    theta[(i, j)] = -theta[(i, j)];
                }
            }
        }
    }
    for i in 0..p {
        theta[(i, i)] += Complex::new(design.loading, 0.0);
    }
    if !is_hermitian(&theta, 0.0) {
        return Err(Error::Design {
            detail: format!("class {class} inverse SDM at k={k} is not Hermitian"),
            min_eigenvalue: f64::NAN,
        });
    }
    let min_eigenvalue = min_eigenvalue_hermitian(&theta);
    if min_eigenvalue <= MIN_EIGENVALUE {
        return Err(Error::Design {
            detail: format!("class {class} inverse SDM at k={k} is not positive definite for p={p}"),
            min_eigenvalue,
        });
    }
    Ok(theta)
}

/// Spectral density matrix `Theta^{-1}`.
pub fn build_sdm(design: &SimDesign, class: ClassLabel, k: usize) -> Result<CMatrix> {
    build_theta(design, class, k)?
        .try_inverse()
        .ok_or_else(|| Error::numeric(format!("inverse SDM at k={k} is singular")))
}

/// True difference `Theta_2k - Theta_1k`.
pub fn true_difference(design: &SimDesign, k: usize) -> Result<CMatrix> {
    Ok(build_theta(design, ClassLabel::Two, k)? - build_theta(design, ClassLabel::One, k)?)
}

/// Ground truth for recovery metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub p: usize,
    pub t: usize,
    pub n_freq: usize,
    pub signal_band: Vec<usize>,
    /// 0-based `(i, j)` positions of the nonzero entries of the real augmented
    /// difference at every signal frequency (zero at all other frequencies).
    pub support: Vec<(usize, usize)>,
}

impl GroundTruth {
    pub fn from_design(design: &SimDesign) -> Result<Self> {
        design.validate()?;
        let grid = design.grid()?;
        let band: BTreeSet<usize> = design.signal_band.iter().copied().collect();
        let support = match band.iter().next() {
            Some(&k) => {
                let d = realify(&true_difference(design, k)?).into_matrix();
                let n = d.nrows();
                (0..n)
                    .flat_map(|i| (0..n).map(move |j| (i, j)))
                    .filter(|&(i, j)| d[(i, j)] != 0.0)
                    .collect()
            }
            None => Vec::new(),
        };
        Ok(GroundTruth {
            p: design.p,
            t: design.t,
            n_freq: grid.n_freq(),
            signal_band: band.into_iter().collect(),
            support,
        })
    }

    pub fn is_signal(&self, k: usize) -> bool {
        self.signal_band.binary_search(&k).is_ok()
    }
}

/// Cholesky factors of the SDMs a design draws from.
pub struct Population {
    design: SimDesign,
    grid: FourierGrid,
    /// in-band factors per class, and the shared off-band factor
    band: [CMatrix; 2],
    off_band: CMatrix,
    /// real factor for the DC and Nyquist components
    real: RMatrix,
}

fn complex_chol(m: CMatrix, what: &str) -> Result<CMatrix> {
    Cholesky::new(m)
        .map(|c| c.l())
        .ok_or_else(|| Error::numeric(format!("{what} is not positive definite")))
}

impl Population {
    pub fn new(design: &SimDesign) -> Result<Self> {
        design.validate()?;
        let grid = design.grid()?;
        // off-band SDM is the same for both classes and all k
        let off_k = (1..=grid.n_freq()).find(|k| !design.in_band(*k));
        let band_k = design.signal_band.first().copied();
        let off = match off_k {
            Some(k) => build_sdm(design, ClassLabel::One, k)?,
            None => build_sdm(design, ClassLabel::One, 1)?,
        };
        let (b1, b2) = match band_k {
            Some(k) => (
                build_sdm(design, ClassLabel::One, k)?,
                build_sdm(design, ClassLabel::Two, k)?,
            ),
            None => (off.clone(), off.clone()),
        };
        let real_part = off.map(|c| c.re);
        let real = Cholesky::new(real_part)
            .map(|c| c.l())
            .ok_or_else(|| Error::numeric("real part of the SDM is not positive definite"))?;
        Ok(Population {
            grid,
            band: [complex_chol(b1, "class 1 SDM")?, complex_chol(b2, "class 2 SDM")?],
            off_band: complex_chol(off, "off-band SDM")?,
            real,
            design: design.clone(),
        })
    }

    pub fn design(&self) -> &SimDesign {
        &self.design
    }

    fn factor(&self, class: ClassLabel, k: usize) -> &CMatrix {
        if k <= self.grid.n_freq() && self.design.in_band(k) {
            &self.band[(class.as_u8() - 1) as usize]
        } else {
            &self.off_band
        }
    }

    /// One series drawn from the random stream `stream` of `seed`.
    ///
    /// Draws `z(omega_k) ~ CN(0, S_k)` for `0 < k < T/2`, completes the
    /// spectrum by conjugate symmetry (real Gaussian DC and Nyquist terms),
    /// and inverts the `T^{-1/2}`-normalized DFT, so [`crate::spectral::dft`]
    /// of the result returns the drawn coefficients.
    pub fn sample(&self, class: ClassLabel, seed: u64, stream: u64) -> Result<MultivariateSeries> {
        let (p, len) = (self.design.p, self.design.t);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let mut spec = CMatrix::zeros(p, len);
        let half = std::f64::consts::FRAC_1_SQRT_2;
        for k in 1..(len + 1) / 2 {
            let w = CVector::from_fn(p, |_, _| Complex::new(half * normal(), half * normal()));
            let z = self.factor(class, k) * w;
            for c in 0..p {
                spec[(c, k)] = z[c];
                spec[(c, len - k)] = z[c].conj();
            }
        }
        let mut real_terms = vec![0];
        if len % 2 == 0 {
            real_terms.push(len / 2);
        }
        for k in real_terms {
            let g = nalgebra::DVector::from_fn(p, |_, _| normal());
            let z = &self.real * g;
            for c in 0..p {
                spec[(c, k)] = Complex::new(z[c], 0.0);
            }
        }
        let series = inverse_dft(&spec)?;
        MultivariateSeries::new(series, Some(class))
    }
}

/// Inverse of [`crate::spectral::dft_full`]: `x(t) = T^{-1/2} sum_k z_k
/// exp(2 pi i k t / T)`, `t = 1..T`. Fails if the result is not real.
pub fn inverse_dft(spec: &CMatrix) -> Result<RMatrix> {
    let (p, len) = spec.shape();
    let fft = FftPlanner::new().plan_fft_inverse(len);
    let scale = 1.0 / (len as f64).sqrt();
    let mut out = RMatrix::zeros(p, len);
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for c in 0..p {
        for (k, slot) in buf.iter_mut().enumerate() {
            let phase = 2.0 * std::f64::consts::PI * k as f64 / len as f64;
            *slot = spec[(c, k)] * Complex::from_polar(1.0, phase);
        }
        fft.process(&mut buf);
        for (t, v) in buf.iter().enumerate() {
            let v = v * scale;
            if v.im.abs() >= 1e-10 {
                return Err(Error::numeric(format!(
                    "inverse DFT left imaginary part {:e} at channel {c}, time {t}",
                    v.im
                )));
            }
            out[(c, t)] = v.re;
        }
    }
    Ok(out)
}

/// Labeled samples (`n1` of class 1 then `n2` of class 2) and ground truth.
/// Sample `j` uses random stream `j`, so the result does not depend on the
/// number of worker threads.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<MultivariateSeries>,
    pub truth: GroundTruth,
}

pub fn generate_dataset(design: &SimDesign) -> Result<Dataset> {
    let pop = Population::new(design)?;
    let n = design.n1 + design.n2;
    let samples = par::try_map_indexed(n, |j| {
        let class = if j < design.n1 { ClassLabel::One } else { ClassLabel::Two };
        pop.sample(class, design.seed, j as u64)
    })?;
    Ok(Dataset {
        samples,
        truth: GroundTruth::from_design(design)?,
    })
}
