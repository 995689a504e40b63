//! Frequency screening by the largest jump among ordered difference norms.

use serde::{Deserialize, Serialize};

use crate::dtrace::DifferenceStack;
use crate::error::{Error, Result};

/// Default lower bound substituted for tiny norms before taking ratios.
pub const DEFAULT_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    /// `||D_k||_F` for `k = 1..=T'`.
    pub d: Vec<f64>,
    /// 1-based frequency indices sorted by `d` ascending (stable).
    pub order: Vec<usize>,
    /// Number of frequencies screened out as noise.
    pub t0_hat: usize,
    /// 1-based indices of the retained frequencies, ascending.
    pub selected: Vec<usize>,
    /// `r_k = d_(k+1) / d_(k)` on the floored ordered norms, `k = 1..T'-1`.
    pub ratios: Vec<f64>,
}

impl ScreeningResult {
    /// Keeps every frequency; used before a stack has been screened.
    pub fn keep_all(d: Vec<f64>) -> Self {
        let n = d.len();
        ScreeningResult {
            order: ascending_order(&d),
            d,
            t0_hat: 0,
            selected: (1..=n).collect(),
            ratios: Vec::new(),
        }
    }

    pub fn is_selected(&self, k: usize) -> bool {
        self.selected.binary_search(&k).is_ok()
    }
}

pub fn frobenius_norms(stack: &DifferenceStack) -> Vec<f64> {
    stack.frames().iter().map(|f| f.as_matrix().norm()).collect()
}

fn ascending_order(d: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    idx.into_iter().map(|i| i + 1).collect()
}

/// 1-based frequency indices by decreasing `d`, ties kept in index order.
pub fn rank_frequencies(d: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    idx.into_iter().map(|i| i + 1).collect()
}

/// Max-ratio screening.
///
/// Sorts `d` ascending, raises values below `floor` to `floor`, and takes
/// `T0 = argmax_{t_min <= k <= t_max} d_(k+1) / d_(k)` (smallest `k` on
/// ties). Frequencies with `d_k > d_(T0)` are retained.
pub fn screen(d: &[f64], t_min: usize, t_max: usize, floor: f64) -> Result<ScreeningResult> {
    let n = d.len();
    if n < 2 {
        return Err(Error::input(format!("screening needs at least 2 frequencies, got {n}")));
    }
    if !(1 <= t_min && t_min <= t_max && t_max < n) {
        return Err(Error::input(format!(
            "need 1 <= t_min <= t_max <= {}, got t_min={t_min}, t_max={t_max}",
            n - 1
        )));
    }
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::input(format!("floor must be positive, got {floor}")));
    }
    if d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::input("norms must be finite and nonnegative"));
    }
    let order = ascending_order(d);
    let sorted: Vec<f64> = order.iter().map(|&k| d[k - 1].max(floor)).collect();
    if sorted.iter().all(|v| *v == sorted[0]) {
        return Err(Error::Degenerate("all frequency norms are equal".into()));
    }
    let ratios: Vec<f64> = sorted.windows(2).map(|w| w[1] / w[0]).collect();
    let mut t0_hat = t_min;
    for k in t_min..=t_max {
        if ratios[k - 1] > ratios[t0_hat - 1] {
            t0_hat = k;
        }
    }
    let cut = d[order[t0_hat - 1] - 1];
    let selected = (1..=n).filter(|&k| d[k - 1] > cut).collect();
    Ok(ScreeningResult {
        d: d.to_vec(),
        order,
        t0_hat,
        selected,
        ratios,
    })
}

/// [`screen`] with `t_min = 1`, `t_max = T' - 1` and the default floor.
pub fn screen_default(d: &[f64]) -> Result<ScreeningResult> {
    screen(d, 1, d.len().saturating_sub(1).max(1), DEFAULT_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tilde::{realify, RealAugmented};
    use crate::CMatrix;
    use nalgebra::Complex;

    #[test]
    fn zero_stack_norms() {
        assert_eq!(frobenius_norms(&DifferenceStack::zeros(3, 4)), vec![0.0; 4]);
    }

    #[test]
    fn single_entry_norm_counts_mirrors() {
        let mut c = CMatrix::zeros(3, 3);
        c[(0, 0)] = Complex::new(3.0, 0.0);
        let mut s = DifferenceStack::zeros(3, 2);
        s.set(2, realify(&c)).unwrap();
        // the real entry appears on both diagonal blocks: sqrt(2 * 9)
        assert!((frobenius_norms(&s)[1] - 18f64.sqrt()).abs() < 1e-12);

        // an off-diagonal Hermitian pair with real part 3 shows up four times
        let mut c = CMatrix::zeros(3, 3);
        c[(0, 1)] = Complex::new(3.0, 0.0);
        c[(1, 0)] = Complex::new(3.0, 0.0);
        s.set(1, realify(&c)).unwrap();
        assert!((frobenius_norms(&s)[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn norms_match_direct_sum_of_squares() {
        let mut r = crate::testutil::rng(8);
        let frames: Vec<RealAugmented> = (0..5)
            .map(|_| realify(&crate::testutil::random_hermitian(&mut r, 3)))
            .collect();
        let s = DifferenceStack::new(frames.clone()).unwrap();
        for (d, f) in frobenius_norms(&s).iter().zip(&frames) {
            let direct: f64 = f.as_matrix().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((d - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_ratio_example() {
        let d = [0.01, 0.012, 0.011, 5.0, 6.0];
        let res = screen(&d, 1, 4, 1e-12).unwrap();
        assert_eq!(res.order, vec![1, 3, 2, 4, 5]);
        let expect = [1.1, 0.012 / 0.011, 5.0 / 0.012, 1.2];
        for (r, e) in res.ratios.iter().zip(expect) {
            assert!((r - e).abs() < 1e-12);
        }
        assert!((res.ratios[2] - 416.6666666666667).abs() < 1e-9);
        assert_eq!(res.t0_hat, 3);
        assert_eq!(res.selected, vec![4, 5]);
    }

    #[test]
    fn single_signal() {
        let mut d = vec![0.0; 8];
        d[5] = 0.4;
        let res = screen(&d, 1, 7, DEFAULT_FLOOR).unwrap();
        assert_eq!(res.t0_hat, 7);
        assert_eq!(res.selected, vec![6]);
    }

    #[test]
    fn geometric_ties_pick_smallest() {
        let d: Vec<f64> = (0..6).map(|i| 2f64.powi(i)).collect();
        let res = screen(&d, 1, 5, DEFAULT_FLOOR).unwrap();
        assert_eq!(res.t0_hat, 1);
        assert_eq!(res.selected, vec![2, 3, 4, 5, 6]);
        let res = screen(&d, 3, 4, DEFAULT_FLOOR).unwrap();
        assert_eq!(res.t0_hat, 3);
    }

    #[test]
    fn degenerate_and_bad_bounds() {
        assert!(matches!(screen(&[1.0; 4], 1, 3, 1e-12), Err(Error::Degenerate(_))));
        assert!(matches!(screen(&[0.0; 4], 1, 3, 1e-12), Err(Error::Degenerate(_))));
        assert!(screen(&[1.0, 2.0, 3.0], 0, 2, 1e-12).is_err());
        assert!(screen(&[1.0, 2.0, 3.0], 1, 3, 1e-12).is_err());
        assert!(screen(&[1.0, 2.0, 3.0], 2, 1, 1e-12).is_err());
        assert!(screen(&[1.0, 2.0, 3.0], 1, 2, 0.0).is_err());
    }

    #[test]
    fn ranking() {
        assert_eq!(rank_frequencies(&[1.0, 3.0, 2.0]), vec![2, 3, 1]);
        assert_eq!(rank_frequencies(&[4.0; 5]), vec![1, 2, 3, 4, 5]);
    }
}
