//! Response-matrix estimation through the structure `D_i = C - g a_i^T`,
//! where `a_i` is row `i` of `C` and `g` is column `i` of `(I - B)^{-1}`.
//!
//! When `m` equals `n`, the interventional data spans only `n - 1`
//! dimensions (the clamped coordinate is constant), so `D_i` has more columns
//! than its data has dimensions and cannot be whitened on its own. Here `C`
//! comes from the observational decomposition and only `g` is fitted. It is
//! started from the two roots of the covariance identity
//!
//! `Σ_Y - (Σ_X - s s^T / σ_ii) = σ_ii h h^T`, `h = g - s / σ_ii`,
//!
//! with `s = Σ_X[:, i]`, and the fourth cumulant picks between them.
//!
//! The identity pins `h` only through `h h^T`, so when `h` is near zero
//! (no confounding between `X_i` and its descendants) sampling error in the
//! covariances moves `g` by its square root. Means are linear in `g`:
//! `E[X | do(X_i = v)] - E[X] = g (v - E[X_i])`, which gives `g` directly
//! whenever the intervention shifts `X_i` by a detectable amount.

use nalgebra::{DMatrix, DVector};

use crate::cumulants::{multiplicity, CumulantTensor4, Moments};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::model_cumulant;

const MAX_LM_ITERS: usize = 100;

/// `C - g c_i^T`.
pub fn response_from_g(c_hat: &DMatrix<f64>, target: usize, g: &[f64]) -> DMatrix<f64> {
    let mut d = c_hat.clone();
    let row: Vec<f64> = c_hat.row(target).iter().copied().collect();
    for r in 0..d.nrows() {
        for j in 0..d.ncols() {
            d[(r, j)] -= g[r] * row[j];
        }
    }
    d
}

struct Fit<'a> {
    c_hat: &'a DMatrix<f64>,
    target: usize,
    free: &'a [usize],
    kappa: &'a [f64],
    cov: &'a DMatrix<f64>,
    m4: &'a CumulantTensor4,
    weights4: Vec<f64>,
}

impl Fit<'_> {
    fn g_of(&self, p: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.c_hat.nrows()];
        g[self.target] = 1.0;
        for (&r, &v) in self.free.iter().zip(p) {
            g[r] = v;
        }
        g
    }

    fn residuals(&self, p: &[f64]) -> Result<Vec<f64>> {
        let d = response_from_g(self.c_hat, self.target, &self.g_of(p));
        let k4 = model_cumulant(&d, self.kappa)?;
        let mut out: Vec<f64> = k4
            .packed()
            .iter()
            .zip(self.m4.packed())
            .zip(&self.weights4)
            .map(|((a, b), w)| w * (a - b))
            .collect();
        let dd = &d * d.transpose();
        let n = d.nrows();
        for r in 0..n {
            for c in r..n {
                let w = if r == c {
                    1.0
                } else {
                    std::f64::consts::SQRT_2
                };
                out.push(w * (dd[(r, c)] - self.cov[(r, c)]));
            }
        }
        Ok(out)
    }

    fn cost(&self, p: &[f64]) -> Result<f64> {
        Ok(self.residuals(p)?.iter().map(|v| v * v).sum())
    }

    /// Levenberg-Marquardt with a central-difference Jacobian.
    fn solve(&self, start: Vec<f64>) -> Result<(Vec<f64>, f64)> {
        let k = start.len();
        let mut p = start;
        let mut r = self.residuals(&p)?;
        let mut cost: f64 = r.iter().map(|v| v * v).sum();
        if k == 0 {
            return Ok((p, cost));
        }
        let mut mu = 1e-3;
        for _ in 0..MAX_LM_ITERS {
            let mut jac = DMatrix::zeros(r.len(), k);
            for q in 0..k {
                let h = 1e-6 * (1.0 + p[q].abs());
                let mut up = p.clone();
                up[q] += h;
                let mut dn = p.clone();
                dn[q] -= h;
                let (ru, rd) = (self.residuals(&up)?, self.residuals(&dn)?);
                for e in 0..r.len() {
                    jac[(e, q)] = (ru[e] - rd[e]) / (2.0 * h);
                }
            }
            let rv = DVector::from_vec(r.clone());
            let jtj = jac.transpose() * &jac;
            let jtr = jac.transpose() * rv;
            let mut improved = false;
            for _ in 0..30 {
                let mut lhs = jtj.clone();
                for q in 0..k {
                    lhs[(q, q)] += mu * (jtj[(q, q)] + 1e-12);
                }
                let Some(chol) = lhs.cholesky() else {
                    mu *= 4.0;
                    continue;
                };
                let step = chol.solve(&(-&jtr));
                let cand: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                let rc = self.residuals(&cand)?;
                let cc: f64 = rc.iter().map(|v| v * v).sum();
                if cc.is_finite() && cc < cost {
                    let rel = (cost - cc) / cost.max(f64::MIN_POSITIVE);
                    p = cand;
                    r = rc;
                    cost = cc;
                    mu = (mu / 3.0).max(1e-12);
                    improved = rel > 1e-12 && step.norm() > 1e-14;
                    break;
                }
                mu *= 4.0;
            }
            if !improved {
                break;
            }
        }
        Ok((p, cost))
    }
}

/// Fitted response matrix for one intervention.
#[derive(Debug, Clone)]
pub struct CoupledResponse {
    pub d: DMatrix<f64>,
    pub g: Vec<f64>,
    pub cost: f64,
}

/// `g` from the mean shift, if the target's own shift exceeds `z` standard
/// errors.
pub fn mean_shift_g(
    obs: &Moments,
    intv: &Moments,
    target: usize,
    free: &[usize],
    z: f64,
) -> Option<Vec<f64>> {
    let n = obs.mean.len();
    if target >= n || intv.mean.len() != n {
        return None;
    }
    let se = |i: usize| {
        let term = |m: &Moments| {
            if m.n_samples == usize::MAX {
                0.0
            } else {
                m.var[i] / m.n_samples as f64
            }
        };
        (term(obs) + term(intv)).sqrt()
    };
    let dt = intv.mean[target] - obs.mean[target];
    if !dt.is_finite() || dt == 0.0 || dt.abs() <= z * se(target) {
        return None;
    }
    let mut g = vec![0.0; n];
    g[target] = 1.0;
    for &r in free {
        g[r] = (intv.mean[r] - obs.mean[r]) / dt;
    }
    Some(g)
}

/// Fits `g` (with `g[target] = 1` and `g[r] = 0` outside `free`) so that
/// `D = C - g c_target^T` matches the interventional covariance and cumulant.
/// With `shift_z` set, a significant mean shift of the target is used instead.
pub fn coupled_response(
    c_hat: &DMatrix<f64>,
    obs: &Moments,
    intv: &Moments,
    target: usize,
    free: &[usize],
    kappa: &[f64],
    shift_z: Option<f64>,
) -> Result<CoupledResponse> {
    let n = c_hat.nrows();
    if target >= n {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: n,
        });
    }
    if obs.cov.nrows() != n || intv.cov.nrows() != n || intv.m4.dim() != n {
        return Err(Error::Dimension("moment dimensions differ from C".into()));
    }
    if free.iter().any(|&r| r >= n || r == target) {
        return Err(Error::Config("free rows must exclude the target".into()));
    }
    let fit = Fit {
        c_hat,
        target,
        free,
        kappa,
        cov: &intv.cov,
        m4: &intv.m4,
        weights4: CumulantTensor4::indices(n)
            .map(|idx| multiplicity(idx).sqrt())
            .collect(),
    };

    if let Some(g) = shift_z.and_then(|z| mean_shift_g(obs, intv, target, free, z)) {
        let p: Vec<f64> = free.iter().map(|&r| g[r]).collect();
        return Ok(CoupledResponse {
            d: response_from_g(c_hat, target, &g),
            cost: fit.cost(&p)?,
            g,
        });
    }

    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; free.len()]];
    let s = obs.cov.column(target).into_owned();
    let sii = obs.cov[(target, target)];
    if sii > 0.0 {
        let diff = &intv.cov - &obs.cov + &s * s.transpose() / sii;
        let (vals, vecs) = linalg::sym_eigen_desc(&diff);
        let amp = (vals[0].max(0.0) / sii).sqrt();
        for sign in [1.0, -1.0] {
            starts.push(
                free.iter()
                    .map(|&r| s[r] / sii + sign * amp * vecs[(r, 0)])
                    .collect(),
            );
        }
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let (p, cost) = fit.solve(start)?;
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((p, cost));
        }
    }
    let (p, _) = best.expect("at least one start");
    let g = fit.g_of(&p);
    let cost = fit.cost(&p)?;
    Ok(CoupledResponse {
        d: response_from_g(c_hat, target, &g),
        g,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_population_g() {
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.5, 0.8, 1.2, 0.1, -0.4, 0.9, 1.1]);
        let g = [1.0, 0.6, -0.7];
        let d = response_from_g(&c, 0, &g);
        assert!(d.row(0).iter().all(|&v| v == 0.0));
        let obs = Moments::population(&c, 3.0, 0.0, &[]).unwrap();
        let intv = Moments::population(&d, 3.0, 0.0, &[]).unwrap();
        let fit = coupled_response(&c, &obs, &intv, 0, &[1, 2], &[3.0; 3], Some(3.0)).unwrap();
        for r in 0..3 {
            assert!((fit.g[r] - g[r]).abs() < 1e-8, "{:?}", fit.g);
        }
        assert!(fit.cost < 1e-16);
    }

    #[test]
    fn mean_shift_gives_g() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]);
        let g = [1.0, 0.5];
        let d = response_from_g(&c, 0, &g);
        let obs = Moments::population(&c, 3.0, 1.0, &[]).unwrap();
        // do(X_1 = 5): the target moves by 4, its child by 0.5 * 4
        let intv = Moments::population(&d, 3.0, 1.0, &[5.0, 2.5]).unwrap();
        assert_eq!(
            mean_shift_g(&obs, &intv, 0, &[1], 3.0).unwrap(),
            vec![1.0, 0.5]
        );
        assert!(mean_shift_g(&obs, &obs, 0, &[1], 3.0).is_none());
        let fit = coupled_response(&c, &obs, &intv, 0, &[1], &[3.0; 2], Some(3.0)).unwrap();
        assert!(fit.cost < 1e-24);
    }
}
