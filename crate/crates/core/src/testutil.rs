use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::spectral::MultivariateSeries;
use crate::tilde::{realify, RealAugmented};
use crate::{CMatrix, CVector, RMatrix};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(r)
}

pub fn random_real(r: &mut ChaCha20Rng, rows: usize, cols: usize) -> RMatrix {
    RMatrix::from_fn(rows, cols, |_, _| normal(r))
}

pub fn random_complex(r: &mut ChaCha20Rng, p: usize) -> CMatrix {
    CMatrix::from_fn(p, p, |_, _| Complex::new(normal(r), normal(r)))
}

pub fn random_cvector(r: &mut ChaCha20Rng, p: usize) -> CVector {
    CVector::from_fn(p, |_, _| Complex::new(normal(r), normal(r)))
}

pub fn random_hermitian(r: &mut ChaCha20Rng, p: usize) -> CMatrix {
    let a = random_complex(r, p);
    (&a + a.adjoint()) * Complex::new(0.5, 0.0)
}

/// Hermitian positive definite with eigenvalues at least `1`.
pub fn random_hpd(r: &mut ChaCha20Rng, p: usize) -> CMatrix {
    let a = random_complex(r, p);
    let mut m = &a * a.adjoint() / Complex::new(p as f64, 0.0);
    for i in 0..p {
        m[(i, i)] += Complex::new(1.0, 0.0);
    }
    m
}

pub fn random_hpd_tilde(r: &mut ChaCha20Rng, p: usize) -> RealAugmented {
    realify(&random_hpd(r, p))
}

pub fn random_symmetric(r: &mut ChaCha20Rng, n: usize) -> RMatrix {
    let a = random_real(r, n, n);
    (&a + a.transpose()) * 0.5
}

pub fn random_series(r: &mut ChaCha20Rng, p: usize, len: usize) -> MultivariateSeries {
    MultivariateSeries::new(random_real(r, p, len), None).unwrap()
}
