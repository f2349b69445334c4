//! Error metrics against a ground-truth model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SemIcaModel;
use crate::recovery::order::is_topological;
use crate::recovery::RecoveryResult;

/// Column matching is exhaustive (over subsets) up to this size.
const EXHAUSTIVE_LIMIT: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `(1/n^2) ‖B - B̂‖_F^2`.
    pub mse_b: f64,
    /// `(1/(nm)) ‖A - Â P S‖_F^2`, minimized over column permutations `P` and
    /// real per-column scales `S`.
    pub mse_a: f64,
    /// `max |A - Â P S|` at the alignment that minimizes `mse_a`.
    pub max_abs_err_a: f64,
    pub order_correct: bool,
}

/// Minimum-cost perfect matching of rows to columns of a square cost table.
pub fn min_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let k = cost.len();
    if k == 0 {
        return Vec::new();
    }
    if k > EXHAUSTIVE_LIMIT {
        return greedy_assignment(cost);
    }
    // best[mask]: cheapest way to give rows 0..popcount(mask) the columns in mask
    let full = 1usize << k;
    let mut best = vec![f64::INFINITY; full];
    let mut choice = vec![usize::MAX; full];
    best[0] = 0.0;
    for mask in 0..full {
        if !best[mask].is_finite() {
            continue;
        }
        let row = mask.count_ones() as usize;
        if row == k {
            continue;
        }
        for col in 0..k {
            if mask >> col & 1 == 1 {
                continue;
            }
            let next = mask | 1 << col;
            let v = best[mask] + cost[row][col];
            if v < best[next] {
                best[next] = v;
                choice[next] = col;
            }
        }
    }
    let mut assign = vec![0; k];
    let mut mask = full - 1;
    for row in (0..k).rev() {
        let col = choice[mask];
        assign[row] = col;
        mask &= !(1 << col);
    }
    assign
}

fn greedy_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let k = cost.len();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(k * k);
    for (r, row) in cost.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            pairs.push((v, r, c));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut assign = vec![usize::MAX; k];
    let mut used = vec![false; k];
    for (_, r, c) in pairs {
        if assign[r] == usize::MAX && !used[c] {
            assign[r] = c;
            used[c] = true;
        }
    }
    assign
}

/// Padded square cost table: true columns beyond `A`'s count cost nothing,
/// estimated columns beyond `Â`'s count leave the true column unexplained.
fn padded_cost(
    a: &DMatrix<f64>,
    a_hat: &DMatrix<f64>,
    pair: impl Fn(usize, usize) -> f64,
) -> Vec<Vec<f64>> {
    let (m, mh) = (a.ncols(), a_hat.ncols());
    let k = m.max(mh);
    (0..k)
        .map(|j| {
            (0..k)
                .map(|p| match (j < m, p < mh) {
                    (false, _) => 0.0,
                    (true, false) => a.column(j).norm_squared(),
                    (true, true) => pair(j, p),
                })
                .collect()
        })
        .collect()
}

fn scaled_cost(a: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> Vec<Vec<f64>> {
    padded_cost(a, a_hat, |j, p| {
        let (aj, ap) = (a.column(j), a_hat.column(p));
        let np = ap.norm_squared();
        if np == 0.0 {
            aj.norm_squared()
        } else {
            (aj.norm_squared() - aj.dot(&ap).powi(2) / np).max(0.0)
        }
    })
}

/// `‖A - Â P S‖_F^2` minimized over permutations and real column scales.
pub fn aligned_sq_error(a: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> f64 {
    let cost = scaled_cost(a, a_hat);
    let assign = min_assignment(&cost);
    assign.iter().enumerate().map(|(j, &p)| cost[j][p]).sum()
}

/// `Â P S` for the permutation and real scales of [`aligned_sq_error`].
/// True columns without a partner are zero.
pub fn align_to_truth(a: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> DMatrix<f64> {
    let assign = min_assignment(&scaled_cost(a, a_hat));
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for j in 0..a.ncols() {
        let p = assign[j];
        if p >= a_hat.ncols() {
            continue;
        }
        let (aj, ap) = (a.column(j), a_hat.column(p));
        let np = ap.norm_squared();
        if np > 0.0 {
            out.set_column(j, &(ap * (aj.dot(&ap) / np)));
        }
    }
    out
}

pub fn evaluate(model: &SemIcaModel, result: &RecoveryResult) -> Result<Metrics> {
    evaluate_parts(model, &result.a_hat, &result.b_hat, &result.causal_order)
}

pub fn evaluate_parts(
    model: &SemIcaModel,
    a_hat: &DMatrix<f64>,
    b_hat: &DMatrix<f64>,
    order: &[usize],
) -> Result<Metrics> {
    let (n, m) = (model.n(), model.m());
    if b_hat.shape() != (n, n) || a_hat.nrows() != n {
        return Err(Error::Dimension(format!(
            "estimate shapes {:?} and {:?} for a model with n = {n}",
            a_hat.shape(),
            b_hat.shape()
        )));
    }
    let mse_b = (&model.b - b_hat).norm_squared() / (n * n) as f64;
    let mse_a = aligned_sq_error(&model.a, a_hat) / (n * m) as f64;
    let max_abs_err_a = (&model.a - align_to_truth(&model.a, a_hat)).amax();
    Ok(Metrics {
        mse_b,
        mse_a,
        max_abs_err_a,
        order_correct: is_topological(&model.b, order),
    })
}
