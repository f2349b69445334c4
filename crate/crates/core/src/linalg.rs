//! Small dense linear-algebra helpers shared by the model, estimators and
//! the recovery pipeline.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Solves `(I - B) X = rhs` for strictly lower triangular `B` by forward
/// substitution. Entries of `B` on or above the diagonal are ignored.
pub fn solve_unit_lower(b: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.nrows();
    let mut x = rhs.clone();
    for r in 0..n {
        for k in 0..r {
            let coef = b[(r, k)];
            if coef != 0.0 {
                for c in 0..x.ncols() {
                    x[(r, c)] += coef * x[(k, c)];
                }
            }
        }
    }
    x
}

/// Returns the first entry of `b` on or above the diagonal whose magnitude
/// exceeds `tol`.
pub fn upper_violation(b: &DMatrix<f64>, tol: f64) -> Option<(usize, usize, f64)> {
    for r in 0..b.nrows() {
        for c in r..b.ncols() {
            let v = b[(r, c)];
            if !(v.abs() <= tol) {
                return Some((r, c, v));
            }
        }
    }
    None
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Leading singular triple `(σ_1, u_1, v_1)` of `f` and its second singular
/// value.
///
/// The pair comes from the eigendecomposition of the smaller Gram matrix and
/// `σ_2` from the deflated remainder, so an exactly rank-one input reports a
/// second value at rounding level rather than at the square root of it.
pub fn leading_singular(f: &DMatrix<f64>) -> (f64, f64, DVector<f64>, DVector<f64>) {
    let (n, m) = f.shape();
    if n == 0 || m == 0 {
        return (0.0, 0.0, DVector::zeros(n), DVector::zeros(m));
    }
    let u = if n <= m {
        let (_, vecs) = sym_eigen_desc(&(f * f.transpose()));
        vecs.column(0).into_owned()
    } else {
        let (_, vecs) = sym_eigen_desc(&(f.transpose() * f));
        let fu = f * vecs.column(0);
        let norm = fu.norm();
        if norm == 0.0 {
            let mut e = DVector::zeros(n);
            e[0] = 1.0;
            e
        } else {
            fu / norm
        }
    };
    let sv = f.transpose() * &u;
    let s1 = sv.norm();
    let v = if s1 > 0.0 {
        &sv / s1
    } else {
        DVector::zeros(m)
    };
    let rest = f - &u * sv.transpose();
    let gram = if n <= m {
        &rest * rest.transpose()
    } else {
        rest.transpose() * &rest
    };
    let (vals, _) = sym_eigen_desc(&gram);
    let s2 = vals[0].max(0.0).sqrt();
    (s1, s2, u, v)
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order
/// and each eigenvector's largest-magnitude entry made positive.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in idx.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        canonical_sign(&mut v);
        vectors.set_column(dst, &v);
    }
    (values, vectors)
}

/// Flips `v` so that its largest-magnitude entry is positive (first index
/// wins ties).
pub fn canonical_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Reorders rows and columns: `out[k, l] = m[order[k], order[l]]`.
pub fn permute_sym(m: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(order.len(), order.len(), |k, l| m[(order[k], order[l])])
}

/// Inverse of [`permute_sym`].
pub fn unpermute_sym(m: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    let n = order.len();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        for l in 0..n {
            out[(order[k], order[l])] = m[(k, l)];
        }
    }
    out
}

/// Reorders rows only: `out[k, :] = m[order[k], :]`.
pub fn permute_rows(m: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(order.len(), m.ncols(), |k, c| m[(order[k], c)])
}

/// Inverse of [`permute_rows`].
pub fn unpermute_rows(m: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, &r) in order.iter().enumerate() {
        out.set_row(r, &m.row(k));
    }
    out
}

/// Inverse of a permutation given as a position list.
pub fn inverse_perm(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; order.len()];
    for (k, &v) in order.iter().enumerate() {
        inv[v] = k;
    }
    inv
}

pub fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &v in p {
        if v >= p.len() || seen[v] {
            return false;
        }
        seen[v] = true;
    }
    true
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!(
            "row of length {} where {} columns expected",
            bad.len(),
            ncols
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

/// Serde adapter: matrices travel as row-major arrays of rows.
pub mod rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        from_rows(&rows, ncols).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for a list of matrices.
pub mod rows_vec {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let all: Vec<Vec<Vec<f64>>> = Vec::deserialize(d)?;
        all.iter()
            .map(|rows| {
                let ncols = rows.first().map_or(0, Vec::len);
                from_rows(rows, ncols).map_err(serde::de::Error::custom)
            })
            .collect()
    }
}
