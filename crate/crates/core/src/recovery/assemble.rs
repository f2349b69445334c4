//! Assembly of `G = (I - B)^{-1}` from its recovered columns, and the
//! resulting `(A, B)` estimates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "tol")]
pub enum TriangularPolicy {
    /// Entries of `G` above the diagonal (in causal order) larger than the
    /// tolerance are an error; smaller ones are zeroed.
    Exact(f64),
    /// Every entry above the diagonal is zeroed; those larger than the
    /// tolerance are reported.
    Noisy(f64),
}

impl TriangularPolicy {
    pub fn exact() -> Self {
        TriangularPolicy::Exact(1e-8)
    }

    pub fn noisy() -> Self {
        TriangularPolicy::Noisy(1e-3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub a_hat: DMatrix<f64>,
    /// In original variable coordinates.
    pub b_hat: DMatrix<f64>,
    pub g_hat: DMatrix<f64>,
    /// Variables whose column of `G` defaulted to a basis vector.
    pub unidentified: Vec<usize>,
    /// `(row, col, value)` entries of `G` zeroed above the tolerance.
    pub zeroed: Vec<(usize, usize, f64)>,
}

/// `g_cols[i]` is the recovered column `i` of `G`, or `None` when variable
/// `i` was not intervened on.
pub fn assemble_ab(
    g_cols: &[Option<Vec<f64>>],
    c_hat: &DMatrix<f64>,
    order: &[usize],
    policy: TriangularPolicy,
) -> Result<Assembly> {
    let n = c_hat.nrows();
    if g_cols.len() != n || order.len() != n {
        return Err(Error::Dimension(format!(
            "{} columns of G and order of length {} for {n} variables",
            g_cols.len(),
            order.len()
        )));
    }
    if !linalg::is_permutation(order) {
        return Err(Error::Config(format!("{order:?} is not a permutation")));
    }
    let mut g = DMatrix::identity(n, n);
    let mut unidentified = Vec::new();
    for (i, col) in g_cols.iter().enumerate() {
        match col {
            Some(v) => {
                if v.len() != n {
                    return Err(Error::Dimension(format!(
                        "column {i} of G has length {}",
                        v.len()
                    )));
                }
                for r in 0..n {
                    g[(r, i)] = v[r];
                }
                g[(i, i)] = 1.0;
            }
            None => unidentified.push(i),
        }
    }
    if !linalg::all_finite(&g) {
        return Err(Error::NonFinite("G"));
    }
    let mut gp = linalg::permute_sym(&g, order);
    let mut zeroed = Vec::new();
    for k in 0..n {
        for l in (k + 1)..n {
            let v = gp[(k, l)];
            let (row, col) = (order[k], order[l]);
            match policy {
                TriangularPolicy::Exact(tol) if v.abs() > tol => {
                    return Err(Error::TriangularViolation {
                        row,
                        col,
                        value: v,
                        tol,
                    });
                }
                TriangularPolicy::Noisy(tol) if v.abs() > tol => zeroed.push((row, col, v)),
                _ => {}
            }
            gp[(k, l)] = 0.0;
        }
    }
    // G' = I - B', so B' = I - G' and G'^{-1} solves (I - B') X = I
    let b_of_g = DMatrix::identity(n, n) - &gp;
    let g_inv = linalg::solve_unit_lower(&b_of_g, &DMatrix::identity(n, n));
    if !linalg::all_finite(&g_inv) {
        return Err(Error::Singular("G".into()));
    }
    let mut bp = -g_inv.clone();
    for k in 0..n {
        bp[(k, k)] = 0.0;
    }
    let cp = linalg::permute_rows(c_hat, order);
    let ap = &g_inv * cp;
    Ok(Assembly {
        a_hat: linalg::unpermute_rows(&ap, order),
        b_hat: linalg::unpermute_sym(&bp, order),
        g_hat: linalg::unpermute_sym(&gp, order),
        unidentified,
        zeroed,
    })
}
