//! Time-series containers, the discrete Fourier transform at the Fourier
//! frequencies, and smoothed-periodogram estimates of the spectral density
//! matrix (SDM).

use std::sync::Arc;

use nalgebra::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::{CMatrix, CVector, RMatrix};

/// Class membership. Serialized as the integers 1 and 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ClassLabel {
    One,
    Two,
}

impl ClassLabel {
    pub fn as_u8(self) -> u8 {
        match self {
            ClassLabel::One => 1,
            ClassLabel::Two => 2,
        }
    }

    pub fn other(self) -> Self {
        match self {
            ClassLabel::One => ClassLabel::Two,
            ClassLabel::Two => ClassLabel::One,
        }
    }
}

impl TryFrom<u8> for ClassLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(ClassLabel::One),
            2 => Ok(ClassLabel::Two),
            other => Err(format!("class label must be 1 or 2, got {other}")),
        }
    }
}

impl From<ClassLabel> for u8 {
    fn from(c: ClassLabel) -> u8 {
        c.as_u8()
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// A real `p x T` observation matrix (channels in rows, time in columns).
#[derive(Clone, Debug, PartialEq)]
pub struct MultivariateSeries {
    values: RMatrix,
    label: Option<ClassLabel>,
}

impl MultivariateSeries {
    pub const MIN_LEN: usize = 4;

    pub fn new(values: RMatrix, label: Option<ClassLabel>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::input("series needs at least one channel"));
        }
        if values.ncols() < Self::MIN_LEN {
            return Err(Error::input(format!(
                "series needs at least {} time points, got {}",
                Self::MIN_LEN,
                values.ncols()
            )));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (c, t) = (idx % values.nrows(), idx / values.nrows());
            return Err(Error::input(format!(
                "non-finite value at channel {c}, time {t}"
            )));
        }
        Ok(MultivariateSeries { values, label })
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    pub fn label(&self) -> Option<ClassLabel> {
        self.label
    }

    pub fn values(&self) -> &RMatrix {
        &self.values
    }

    pub fn with_label(mut self, label: Option<ClassLabel>) -> Self {
        self.label = label;
        self
    }

    /// Copy with each channel's sample mean removed.
    pub fn centered(&self) -> Self {
        let mut values = self.values.clone();
        for mut row in values.row_iter_mut() {
            let mean = row.mean();
            row.add_scalar_mut(-mean);
        }
        MultivariateSeries {
            values,
            label: self.label,
        }
    }
}

/// Fourier frequencies `k / T` for `k = 1..=T'`, `T' = floor(T/2) - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FourierGrid {
    len: usize,
}

impl FourierGrid {
    pub fn new(len: usize) -> Result<Self> {
        if len < MultivariateSeries::MIN_LEN {
            return Err(Error::input(format!(
                "series length must be at least {}, got {len}",
                MultivariateSeries::MIN_LEN
            )));
        }
        Ok(FourierGrid { len })
    }

    /// Series length `T`.
    pub fn series_len(&self) -> usize {
        self.len
    }

    /// Number of Fourier frequencies `T'`.
    pub fn n_freq(&self) -> usize {
        self.len / 2 - 1
    }

    /// `omega_k = k / T` (1-based `k`).
    pub fn omega(&self, k: usize) -> f64 {
        k as f64 / self.len as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.indices().map(|k| self.omega(k)).collect()
    }

    /// 1-based frequency indices.
    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.n_freq()
    }

    pub fn check_series(&self, series: &MultivariateSeries) -> Result<()> {
        if series.len() != self.len {
            return Err(Error::dim(format!(
                "series has {} time points, grid expects {}",
                series.len(),
                self.len
            )));
        }
        Ok(())
    }
}

/// A complex `p x p` matrix at Fourier frequency index `k` (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumFrame {
    pub k: usize,
    pub matrix: CMatrix,
}

fn forward_plan(len: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(len)
}

/// DFT on the complete grid `k = 0..T-1` as a `p x T` matrix (column `k`).
///
/// `z(k) = T^{-1/2} sum_{t=1}^{T} x(t) exp(-2 pi i k t / T)`.
pub fn dft_full(series: &MultivariateSeries) -> CMatrix {
    let (p, len) = (series.channels(), series.len());
    let fft = forward_plan(len);
    let scale = 1.0 / (len as f64).sqrt();
    let mut out = CMatrix::zeros(p, len);
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for c in 0..p {
        for (t, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(series.values()[(c, t)], 0.0);
        }
        fft.process(&mut buf);
        for (k, v) in buf.iter().enumerate() {
            // time index starts at 1, so shift the phase by one step
            let phase = -2.0 * std::f64::consts::PI * k as f64 / len as f64;
            out[(c, k)] = v * Complex::from_polar(scale, phase);
        }
    }
    out
}

/// DFT at the Fourier frequencies as a `p x T'` matrix (column `k - 1`).
pub fn dft_matrix(series: &MultivariateSeries, grid: &FourierGrid) -> Result<CMatrix> {
    grid.check_series(series)?;
    let full = dft_full(series);
    Ok(full.columns(1, grid.n_freq()).into_owned())
}

/// DFT vectors `z(omega_k)` for `k = 1..=T'`.
pub fn dft(series: &MultivariateSeries, grid: &FourierGrid) -> Result<Vec<CVector>> {
    let m = dft_matrix(series, grid)?;
    Ok(m.column_iter().map(|c| c.into_owned()).collect())
}

/// `z z*`, built entrywise so the result is exactly Hermitian.
pub fn outer_hermitian(z: &CVector) -> CMatrix {
    let p = z.len();
    let mut m = CMatrix::zeros(p, p);
    for j in 0..p {
        for i in j..p {
            let v = z[i] * z[j].conj();
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
    m
}

pub fn raw_periodogram(series: &MultivariateSeries, grid: &FourierGrid) -> Result<Vec<SpectrumFrame>> {
    Ok(dft(series, grid)?
        .iter()
        .enumerate()
        .map(|(i, z)| SpectrumFrame {
            k: i + 1,
            matrix: outer_hermitian(z),
        })
        .collect())
}

/// Validates a smoothing bandwidth against `T'` frequencies.
pub fn check_bandwidth(bandwidth: usize, n_freq: usize) -> Result<()> {
    if bandwidth == 0 || bandwidth % 2 == 0 {
        return Err(Error::input(format!(
            "bandwidth must be an odd positive integer, got {bandwidth}"
        )));
    }
    if bandwidth > 2 * n_freq - 1 {
        return Err(Error::input(format!(
            "bandwidth {bandwidth} exceeds 2*T'-1 = {}",
            2 * n_freq - 1
        )));
    }
    Ok(())
}

/// Reflects a 1-based index into `[1, n]` without repeating the boundary.
fn reflect(j: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if j < 1 {
        2 - j
    } else if j > n {
        2 * n - j
    } else {
        j
    };
    debug_assert!((1..=n).contains(&r), "window wider than the grid");
    r as usize
}

/// Frequency indices (1-based) in the smoothing window around `k`.
pub fn window_indices(k: usize, bandwidth: usize, n_freq: usize) -> impl Iterator<Item = usize> {
    let h = (bandwidth / 2) as isize;
    (-h..=h).map(move |o| reflect(k as isize + o, n_freq))
}

/// Moving average of frames over `bandwidth` neighbouring frequencies.
pub fn smooth_frames(frames: &[CMatrix], bandwidth: usize) -> Result<Vec<CMatrix>> {
    let n = frames.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    check_bandwidth(bandwidth, n)?;
    let w = 1.0 / bandwidth as f64;
    Ok(par::map_indexed(n, |i| {
        let mut acc = CMatrix::zeros(frames[i].nrows(), frames[i].ncols());
        for j in window_indices(i + 1, bandwidth, n) {
            acc += &frames[j - 1];
        }
        acc * Complex::new(w, 0.0)
    }))
}

pub fn smooth_periodogram(
    series: &MultivariateSeries,
    grid: &FourierGrid,
    bandwidth: usize,
) -> Result<Vec<SpectrumFrame>> {
    check_bandwidth(bandwidth, grid.n_freq())?;
    let raw: Vec<CMatrix> = raw_periodogram(series, grid)?
        .into_iter()
        .map(|f| f.matrix)
        .collect();
    Ok(smooth_frames(&raw, bandwidth)?
        .into_iter()
        .enumerate()
        .map(|(i, matrix)| SpectrumFrame { k: i + 1, matrix })
        .collect())
}

/// Class-average smoothed periodogram from precomputed `p x T'` DFT matrices.
///
/// Sums `z z*` over the samples at each frequency first and smooths the sum,
/// which equals averaging the per-sample smoothed periodograms.
pub fn average_sdm_from_dfts(dfts: &[&CMatrix], bandwidth: usize) -> Result<Vec<CMatrix>> {
    let n = dfts.len();
    if n == 0 {
        return Err(Error::Estimation("no samples to average".into()));
    }
    let (p, n_freq) = (dfts[0].nrows(), dfts[0].ncols());
    if dfts.iter().any(|d| d.nrows() != p || d.ncols() != n_freq) {
        return Err(Error::dim("DFT matrices differ in shape"));
    }
    check_bandwidth(bandwidth, n_freq)?;
    let sums = par::map_indexed(n_freq, |k| {
        let mut acc = CMatrix::zeros(p, p);
        for d in dfts {
            let z = d.column(k);
            for j in 0..p {
                let zj = z[j].conj();
                for i in j..p {
                    acc[(i, j)] += z[i] * zj;
                }
            }
        }
        for j in 0..p {
            acc[(j, j)].im = 0.0;
            for i in (j + 1)..p {
                acc[(j, i)] = acc[(i, j)].conj();
            }
        }
        acc
    });
    let inv_n = Complex::new(1.0 / n as f64, 0.0);
    Ok(smooth_frames(&sums, bandwidth)?
        .into_iter()
        .map(|m| m * inv_n)
        .collect())
}

/// Class-averaged smoothed periodogram `S_hat_lk` for `k = 1..=T'`,
/// dividing by the number of samples carrying `class`.
pub fn class_average_sdm(
    samples: &[MultivariateSeries],
    class: ClassLabel,
    grid: &FourierGrid,
    bandwidth: usize,
) -> Result<Vec<SpectrumFrame>> {
    let members: Vec<&MultivariateSeries> =
        samples.iter().filter(|s| s.label() == Some(class)).collect();
    if members.len() < 2 {
        return Err(Error::Estimation(format!(
            "class {class} needs at least 2 samples, found {}",
            members.len()
        )));
    }
    check_bandwidth(bandwidth, grid.n_freq())?;
    let p = members[0].channels();
    if members.iter().any(|s| s.channels() != p) {
        return Err(Error::dim("samples differ in channel count"));
    }
    let dfts = par::try_map_slice(&members, |s| dft_matrix(s, grid))?;
    let refs: Vec<&CMatrix> = dfts.iter().collect();
    Ok(average_sdm_from_dfts(&refs, bandwidth)?
        .into_iter()
        .enumerate()
        .map(|(i, matrix)| SpectrumFrame { k: i + 1, matrix })
        .collect())
}
