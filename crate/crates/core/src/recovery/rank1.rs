//! Rank-one factors of `C - D_i = g a^T`, where `g` is column `i` of
//! `(I - B)^{-1}` and `a` is row `i` of `C`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_G_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Factor {
    pub target: usize,
    /// Normalized so that `g[target] = 1`.
    pub g: Vec<f64>,
    pub a: Vec<f64>,
    /// `σ_2 / σ_1` of the difference.
    pub ratio: f64,
}

/// Factors one difference `F = C - D_target`.
pub fn rank1_factor(f: &DMatrix<f64>, target: usize, g_floor: f64) -> Result<Rank1Factor> {
    let n = f.nrows();
    if target >= n {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: n,
        });
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response difference"));
    }
    if f.ncols() == 0 {
        return Err(Error::NoSelfSignal(target));
    }
    let (s1, s2, u, v) = linalg::leading_singular(f);
    let pivot = u[target];
    if !(s1 > 0.0) || pivot.abs() < g_floor {
        return Err(Error::NoSelfSignal(target));
    }
    let g: Vec<f64> = u.iter().map(|x| x / pivot).collect();
    let a: Vec<f64> = v.iter().map(|x| x * s1 * pivot).collect();
    let mut g = g;
    g[target] = 1.0;
    Ok(Rank1Factor {
        target,
        g,
        a,
        ratio: s2 / s1,
    })
}

/// One factor per aligned response matrix.
pub fn rank1_differences(
    c_hat: &DMatrix<f64>,
    aligned: &[DMatrix<f64>],
    targets: &[usize],
    g_floor: f64,
) -> Result<Vec<Rank1Factor>> {
    if aligned.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} response matrices for {} targets",
            aligned.len(),
            targets.len()
        )));
    }
    aligned
        .iter()
        .zip(targets)
        .map(|(d, &t)| {
            if d.shape() != c_hat.shape() {
                return Err(Error::Dimension(
                    "response matrix shape differs from C".into(),
                ));
            }
            rank1_factor(&(c_hat - d), t, g_floor)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-14)
    }

    #[test]
    fn m_star_factors() {
        let f1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.0]);
        let r = rank1_factor(&f1, 0, DEFAULT_G_FLOOR).unwrap();
        assert!(close(&r.g, &[1.0, 0.5]) && close(&r.a, &[1.0, 0.0]));
        assert!(r.ratio < 1e-15);
        let f2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 1.0]);
        let r = rank1_factor(&f2, 1, DEFAULT_G_FLOOR).unwrap();
        assert!(close(&r.g, &[0.0, 1.0]) && close(&r.a, &[0.5, 1.0]));
    }

    #[test]
    fn no_self_signal() {
        let f = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 1.0]);
        assert!(matches!(
            rank1_factor(&f, 0, DEFAULT_G_FLOOR),
            Err(Error::NoSelfSignal(0))
        ));
        assert!(rank1_factor(&DMatrix::zeros(2, 2), 1, DEFAULT_G_FLOOR).is_err());
    }
}
