//! Real augmentation of complex matrices and vectors.
//!
//! A complex `p x p` matrix `M = A + iB` is represented by the real
//! `2p x 2p` matrix
//!
//! ```text
//! [  A  B ]
//! [ -B  A ]
//! ```
//!
//! The map is an injective algebra homomorphism, so products, inverses and
//! Hermitian-ness carry over, and `||realify(M)||_F = sqrt(2) ||M||_F`.
//! Vectors are mapped as `z = x + iy -> (x, -y)`, which is the pairing
//! under which `realify(M) * realify_vector(z) = realify_vector(M z)` and
//! `Re(z* M z) = realify_vector(z)^T realify(M) realify_vector(z)`.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::{CMatrix, CVector, RMatrix};

/// A real `2p x 2p` matrix with the `[[A, B], [-B, A]]` block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct RealAugmented(RMatrix);

impl RealAugmented {
    /// Validates the block layout exactly (no tolerance).
    pub fn from_matrix(m: RMatrix) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() || n % 2 != 0 || n == 0 {
            return Err(Error::Structure(format!(
                "expected a nonempty square matrix of even order, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let p = n / 2;
        for i in 0..p {
            for j in 0..p {
                if m[(i, j)] != m[(i + p, j + p)] {
                    return Err(Error::Structure(format!(
                        "diagonal blocks differ at ({i}, {j})"
                    )));
                }
                if m[(i, j + p)] != -m[(i + p, j)] {
                    return Err(Error::Structure(format!(
                        "off-diagonal blocks are not negated at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(RealAugmented(m))
    }

    /// Nearest matrix with the block layout in Frobenius norm: averages the
    /// two diagonal blocks and the off-diagonal block with the negated other.
    pub fn project(m: &RMatrix) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() || n % 2 != 0 || n == 0 {
            return Err(Error::Structure(format!(
                "cannot project a {}x{} matrix",
                m.nrows(),
                m.ncols()
            )));
        }
        let p = n / 2;
        let mut out = RMatrix::zeros(n, n);
        for i in 0..p {
            for j in 0..p {
                let a = 0.5 * (m[(i, j)] + m[(i + p, j + p)]);
                let b = 0.5 * (m[(i, j + p)] - m[(i + p, j)]);
                out[(i, j)] = a;
                out[(i + p, j + p)] = a;
                out[(i, j + p)] = b;
                out[(i + p, j)] = -b;
            }
        }
        Ok(RealAugmented(out))
    }

    pub fn zeros(p: usize) -> Self {
        RealAugmented(RMatrix::zeros(2 * p, 2 * p))
    }

    pub fn identity(p: usize) -> Self {
        RealAugmented(RMatrix::identity(2 * p, 2 * p))
    }

    /// Order of the complex matrix this represents.
    pub fn half_dim(&self) -> usize {
        self.0.nrows() / 2
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &RMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> RMatrix {
        self.0
    }

    pub fn complexify(&self) -> CMatrix {
        let p = self.half_dim();
        CMatrix::from_fn(p, p, |i, j| Complex::new(self.0[(i, j)], self.0[(i, j + p)]))
    }
}

impl AsRef<RMatrix> for RealAugmented {
    fn as_ref(&self) -> &RMatrix {
        &self.0
    }
}

pub fn realify(m: &CMatrix) -> RealAugmented {
    assert!(m.is_square(), "realify needs a square matrix");
    let p = m.nrows();
    let mut out = RMatrix::zeros(2 * p, 2 * p);
    for j in 0..p {
        for i in 0..p {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i + p, j + p)] = z.re;
            out[(i, j + p)] = z.im;
            out[(i + p, j)] = -z.im;
        }
    }
    RealAugmented(out)
}

pub fn complexify(m: &RealAugmented) -> CMatrix {
    m.complexify()
}

/// `z = x + iy` maps to `(x, -y)`.
pub fn realify_vector(z: &CVector) -> DVector<f64> {
    let p = z.len();
    DVector::from_fn(2 * p, |i, _| if i < p { z[i].re } else { -z[i - p].im })
}

pub fn complexify_vector(v: &DVector<f64>) -> Result<CVector> {
    if v.len() % 2 != 0 {
        return Err(Error::dim(format!("odd-length augmented vector ({})", v.len())));
    }
    let p = v.len() / 2;
    Ok(CVector::from_fn(p, |i, _| Complex::new(v[i], -v[i + p])))
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.nrows();
    (0..n).all(|i| (0..=i).all(|j| (m[(i, j)] - m[(j, i)].conj()).norm() <= tol))
}

pub fn is_symmetric(m: &RMatrix, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Smallest eigenvalue of a Hermitian matrix, via its symmetric real image
/// (whose spectrum is the complex spectrum with every value doubled up).
pub fn min_eigenvalue_hermitian(m: &CMatrix) -> f64 {
    min_eigenvalue_symmetric(realify(m).as_matrix())
}

pub fn min_eigenvalue_symmetric(m: &RMatrix) -> f64 {
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Complex matrix built from real and imaginary parts.
pub fn complex_from_parts(re: &DMatrix<f64>, im: &DMatrix<f64>) -> CMatrix {
    CMatrix::from_fn(re.nrows(), re.ncols(), |i, j| {
        Complex::new(re[(i, j)], im[(i, j)])
    })
}
