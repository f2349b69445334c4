#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::DMatrix;
use semica::{LatentSpec, SemIcaModel};

/// A = I, one edge 1 -> 2 of weight 0.5.
pub fn m_star(noise_std: f64) -> SemIcaModel {
    SemIcaModel::new(
        DMatrix::identity(2, 2),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.0]),
        noise_std,
        LatentSpec::laplace(),
    )
    .unwrap()
}

/// Chain 1 -> 2 -> 3 with A = I.
pub fn chain3() -> SemIcaModel {
    SemIcaModel::new(
        DMatrix::identity(3, 3),
        DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, -0.4, 0.0]),
        0.0,
        LatentSpec::laplace(),
    )
    .unwrap()
}

/// Angle between the lines spanned by `u` and `v`, from the component of
/// `v` orthogonal to `u` so small angles keep full precision.
pub fn line_angle(u: &[f64], v: &[f64]) -> f64 {
    let nu2: f64 = u.iter().map(|a| a * a).sum();
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let perp: f64 = u
        .iter()
        .zip(v)
        .map(|(a, b)| (b - dot / nu2 * a).powi(2))
        .sum::<f64>()
        .sqrt();
    perp.atan2(dot.abs() / nu2.sqrt())
}

/// Largest over true columns of the smallest line angle to any estimated
/// column.
pub fn worst_column_angle(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> f64 {
    truth
        .column_iter()
        .map(|t| {
            est.column_iter()
                .map(|e| line_angle(t.as_slice(), e.as_slice()))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Gram-Schmidt on the columns, independent of any library factorization.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = m.clone();
    for j in 0..q.ncols() {
        for k in 0..j {
            let p = q.column(k).dot(&q.column(j));
            let qk = q.column(k).into_owned();
            q.column_mut(j).axpy(-p, &qk, 1.0);
        }
        let nrm = q.column(j).norm();
        q.column_mut(j).scale_mut(1.0 / nrm);
    }
    q
}

// Components of a 2x2 exact-moment problem located by scanning the whitened
// contrast |sum_j k_j <c_j, W v(θ)>^4| on a 0.001 rad grid, then mapped back
// to data coordinates.
pub fn grid_oracle(c: &DMatrix<f64>, kappa: &[f64]) -> Vec<[f64; 2]> {
    let sigma = c * c.transpose();
    let (a, b, d) = (sigma[(0, 0)], sigma[(0, 1)], sigma[(1, 1)]);
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let lams = [mid + rad, mid - rad];
    let vecs: Vec<[f64; 2]> = lams
        .iter()
        .map(|&l| {
            let v = if b.abs() > 1e-300 {
                [b, l - a]
            } else if (l - a).abs() < (l - d).abs() {
                [1.0, 0.0]
            } else {
                [0.0, 1.0]
            };
            let nrm = (v[0] * v[0] + v[1] * v[1]).sqrt();
            [v[0] / nrm, v[1] / nrm]
        })
        .collect();
    // W = U Λ^{-1/2}, unwhitening U Λ^{1/2}
    let whiten = |v: [f64; 2]| -> [f64; 2] {
        let mut out = [0.0; 2];
        for k in 0..2 {
            for r in 0..2 {
                out[r] += vecs[k][r] * v[k] / lams[k].sqrt();
            }
        }
        out
    };
    let unwhiten = |v: [f64; 2]| -> [f64; 2] {
        let mut out = [0.0; 2];
        for k in 0..2 {
            for r in 0..2 {
                out[r] += vecs[k][r] * v[k] * lams[k].sqrt();
            }
        }
        out
    };
    let steps = (PI / 0.001).round() as usize;
    let contrast: Vec<f64> = (0..steps)
        .map(|s| {
            let th = s as f64 * PI / steps as f64;
            let wv = whiten([th.cos(), th.sin()]);
            (0..2)
                .map(|j| kappa[j] * (c[(0, j)] * wv[0] + c[(1, j)] * wv[1]).powi(4))
                .sum::<f64>()
                .abs()
        })
        .collect();
    let mut peaks: Vec<(f64, usize)> = (0..steps)
        .filter(|&s| {
            let prev = contrast[(s + steps - 1) % steps];
            let next = contrast[(s + 1) % steps];
            contrast[s] >= prev && contrast[s] > next
        })
        .map(|s| (contrast[s], s))
        .collect();
    peaks.sort_by(|x, y| y.0.total_cmp(&x.0));
    peaks
        .iter()
        .take(2)
        .map(|&(_, s)| {
            let th = s as f64 * PI / steps as f64;
            unwhiten([th.cos(), th.sin()])
        })
        .collect()
}
