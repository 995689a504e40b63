//! Spectral-domain classification of high-dimensional stationary Gaussian
//! time series.
//!
//! Two classes are told apart by the difference `D_k = Theta_2k - Theta_1k`
//! of their inverse spectral density matrices at the Fourier frequencies.
//! Each `D_k` is estimated sparse (lasso-penalized D-trace loss minimized by
//! ADAM with a proximal step), frequencies carrying signal are screened by a
//! max-ratio rule on `||D_k||_F`, and a Whittle-likelihood discriminant
//! classifies new series.
//!
//! Complex `p x p` matrices are carried in their real `2p x 2p` augmented
//! form (see [`tilde`]) wherever the estimation works on real matrices.

pub mod classifier;
pub mod dtrace;
pub mod error;
pub mod io;
pub mod nll;
pub mod par;
pub mod screening;
pub mod simulate;
pub mod spectral;
pub mod tilde;

#[cfg(test)]
pub(crate) mod testutil;

use nalgebra::{Complex, DMatrix, DVector};

pub type CMatrix = DMatrix<Complex<f64>>;
pub type CVector = DVector<Complex<f64>>;
pub type RMatrix = DMatrix<f64>;

pub use classifier::{EvalReport, Method, TrainedModel};
pub use dtrace::{AdamConfig, DifferenceStack, DtraceProblem};
pub use error::{Error, Result};
pub use screening::ScreeningResult;
pub use simulate::SimDesign;
pub use spectral::{ClassLabel, FourierGrid, MultivariateSeries, SpectrumFrame};
pub use tilde::RealAugmented;
