//! Joint objective over `(A, B, C, D_i)` and its block-coordinate descent.
//!
//! The objective couples the structural equations `(I - B) C = A`,
//! `(I - B_i) D_i = A_i` with the cumulant fits of `C` and every `D_i`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cumulants::{multiplicity, CumulantTensor4};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::model_cumulant;

const ARMIJO_C: f64 = 1e-4;
const ABS_STOP: f64 = 1e-24;
const MAX_STEP: f64 = 1e6;
const LM_TRIES: usize = 12;

/// Fixed data of the objective: cumulant targets and latent kurtoses.
#[derive(Debug, Clone)]
pub struct JointProblem {
    /// Intervened variable of each response matrix.
    pub targets: Vec<usize>,
    pub m4_obs: CumulantTensor4,
    pub m4_int: Vec<CumulantTensor4>,
    pub kappa: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    pub max_cycles: usize,
    /// Stop once a cycle lowers the objective by less than this fraction.
    pub stop_tol: f64,
    pub max_halvings: usize,
    pub initial_step: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_cycles: 500,
            stop_tol: 1e-10,
            max_halvings: 20,
            initial_step: 1e-2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub state: JointState,
    pub trace: Vec<f64>,
    pub cycles: usize,
}

// ‖(I - B_i) D - A_i‖², i.e. every row except the target uses the full
// equation and the target row is compared with zero.
fn linear_term(b: &DMatrix<f64>, x: &DMatrix<f64>, a: &DMatrix<f64>, target: Option<usize>) -> f64 {
    let r = x - b * x - a;
    match target {
        None => r.norm_squared(),
        Some(i) => {
            let mut total = 0.0;
            for row in 0..x.nrows() {
                total += if row == i {
                    x.row(row).norm_squared()
                } else {
                    r.row(row).norm_squared()
                };
            }
            total
        }
    }
}

fn cumulant_term(x: &DMatrix<f64>, kappa: &[f64], m4: &CumulantTensor4) -> Result<f64> {
    model_cumulant(x, kappa)?.distance_sq(m4)
}

impl JointProblem {
    fn check(&self, s: &JointState) -> Result<()> {
        let (n, m) = s.c.shape();
        if s.a.shape() != (n, m) || s.b.shape() != (n, n) {
            return Err(Error::Dimension("A, B and C shapes disagree".into()));
        }
        if s.d.len() != self.targets.len() || self.m4_int.len() != self.targets.len() {
            return Err(Error::Dimension(
                "one response matrix and cumulant per target required".into(),
            ));
        }
        if s.d.iter().any(|d| d.shape() != (n, m)) {
            return Err(Error::Dimension(
                "response matrix shape differs from C".into(),
            ));
        }
        if self.kappa.len() != m {
            return Err(Error::Dimension(format!(
                "{} kurtosis values for {m} latents",
                self.kappa.len()
            )));
        }
        if self.m4_obs.dim() != n || self.m4_int.iter().any(|t| t.dim() != n) {
            return Err(Error::Dimension("cumulant dimension differs from n".into()));
        }
        if let Some(&t) = self.targets.iter().find(|&&t| t >= n) {
            return Err(Error::IndexOutOfRange { index: t, len: n });
        }
        Ok(())
    }

    fn a_for(s: &JointState, target: usize) -> DMatrix<f64> {
        let mut a = s.a.clone();
        a.row_mut(target).fill(0.0);
        a
    }

    fn c_block(&self, s: &JointState, c: &DMatrix<f64>) -> Result<f64> {
        Ok(linear_term(&s.b, c, &s.a, None) + cumulant_term(c, &self.kappa, &self.m4_obs)?)
    }

    fn d_block(&self, s: &JointState, k: usize, d: &DMatrix<f64>) -> Result<f64> {
        let t = self.targets[k];
        let mut b = s.b.clone();
        b.row_mut(t).fill(0.0);
        Ok(linear_term(&b, d, &Self::a_for(s, t), Some(t))
            + cumulant_term(d, &self.kappa, &self.m4_int[k])?)
    }

    pub fn objective(&self, s: &JointState) -> Result<f64> {
        self.check(s)?;
        let mut total = self.c_block(s, &s.c)?;
        for k in 0..self.targets.len() {
            total += self.d_block(s, k, &s.d[k])?;
        }
        Ok(total)
    }

    fn cumulant_grad(&self, x: &DMatrix<f64>, m4: &CumulantTensor4) -> Result<DMatrix<f64>> {
        let resid = model_cumulant(x, &self.kappa)?.sub(m4)?;
        let mut g = DMatrix::zeros(x.nrows(), x.ncols());
        for j in 0..x.ncols() {
            if self.kappa[j] == 0.0 {
                continue;
            }
            let u = resid.contract3(x.column(j).as_slice());
            for r in 0..x.nrows() {
                g[(r, j)] = 8.0 * self.kappa[j] * u[r];
            }
        }
        Ok(g)
    }

    fn c_grad(&self, s: &JointState) -> Result<DMatrix<f64>> {
        let l = DMatrix::identity(s.b.nrows(), s.b.nrows()) - &s.b;
        let r = &l * &s.c - &s.a;
        Ok(l.transpose() * r * 2.0 + self.cumulant_grad(&s.c, &self.m4_obs)?)
    }

    fn d_grad(&self, s: &JointState, k: usize) -> Result<DMatrix<f64>> {
        let t = self.targets[k];
        let mut b = s.b.clone();
        b.row_mut(t).fill(0.0);
        let l = DMatrix::identity(b.nrows(), b.nrows()) - &b;
        let r = &l * &s.d[k] - Self::a_for(s, t);
        let mut g = l.transpose() * r * 2.0 + self.cumulant_grad(&s.d[k], &self.m4_int[k])?;
        g.row_mut(t).fill(0.0);
        Ok(g)
    }

    // Residuals of one block and their Jacobian in the entries of `free`
    // rows. `l` and `a` already carry the zeroed target row, if any.
    fn block_system(
        &self,
        l: &DMatrix<f64>,
        x: &DMatrix<f64>,
        a: &DMatrix<f64>,
        m4: &CumulantTensor4,
        free: &[usize],
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (n, m) = x.shape();
        let k4 = model_cumulant(x, &self.kappa)?;
        let n_lin = n * m;
        let n_cum = k4.packed().len();
        let mut res = DVector::zeros(n_lin + n_cum);
        let mut jac = DMatrix::zeros(n_lin + n_cum, free.len() * m);
        let lin = l * x - a;
        for s in 0..n {
            for j in 0..m {
                res[s * m + j] = lin[(s, j)];
                for (fi, &r) in free.iter().enumerate() {
                    jac[(s * m + j, fi * m + j)] = l[(s, r)];
                }
            }
        }
        let mut pos = vec![usize::MAX; n];
        for (fi, &r) in free.iter().enumerate() {
            pos[r] = fi;
        }
        for (e, (idx, (kv, mv))) in CumulantTensor4::indices(n)
            .zip(k4.packed().iter().zip(m4.packed()))
            .enumerate()
        {
            let w = multiplicity(idx).sqrt();
            let row = n_lin + e;
            res[row] = w * (kv - mv);
            for j in 0..m {
                if self.kappa[j] == 0.0 {
                    continue;
                }
                for p in 0..4 {
                    let fi = pos[idx[p]];
                    if fi == usize::MAX {
                        continue;
                    }
                    let mut prod = w * self.kappa[j];
                    for (q, &iq) in idx.iter().enumerate() {
                        if q != p {
                            prod *= x[(iq, j)];
                        }
                    }
                    jac[(row, fi * m + j)] += prod;
                }
            }
        }
        Ok((res, jac))
    }

    fn c_system(&self, s: &JointState) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = s.c.nrows();
        let l = DMatrix::identity(n, n) - &s.b;
        let free: Vec<usize> = (0..n).collect();
        self.block_system(&l, &s.c, &s.a, &self.m4_obs, &free)
    }

    fn d_system(&self, s: &JointState, k: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let t = self.targets[k];
        let n = s.c.nrows();
        let mut b = s.b.clone();
        b.row_mut(t).fill(0.0);
        let l = DMatrix::identity(n, n) - &b;
        let free: Vec<usize> = (0..n).filter(|&r| r != t).collect();
        self.block_system(&l, &s.d[k], &Self::a_for(s, t), &self.m4_int[k], &free)
    }

    /// Closed-form `A`: each row averages the equations it appears in.
    fn solve_a(&self, s: &JointState) -> DMatrix<f64> {
        let (n, m) = s.c.shape();
        let bc = &s.b * &s.c;
        let mut a = &s.c - bc;
        let mut counts = vec![1.0; n];
        for (k, &t) in self.targets.iter().enumerate() {
            let bd = &s.b * &s.d[k];
            for r in 0..n {
                if r == t {
                    continue;
                }
                for j in 0..m {
                    a[(r, j)] += s.d[k][(r, j)] - bd[(r, j)];
                }
                counts[r] += 1.0;
            }
        }
        for r in 0..n {
            a.row_mut(r).scale_mut(1.0 / counts[r]);
        }
        a
    }

    /// Per-row least squares over the entries allowed by `order`.
    fn solve_b(&self, s: &JointState, order: &[usize]) -> DMatrix<f64> {
        let (n, m) = s.c.shape();
        let pos = linalg::inverse_perm(order);
        let mut b = DMatrix::zeros(n, n);
        for r in 0..n {
            let free: Vec<usize> = (0..n).filter(|&c| pos[c] < pos[r]).collect();
            if free.is_empty() {
                continue;
            }
            let p = free.len();
            let mut lhs = DMatrix::zeros(p, p);
            let mut rhs = DMatrix::zeros(p, 1);
            let mut add = |x: &DMatrix<f64>| {
                let xf = DMatrix::from_fn(p, m, |q, j| x[(free[q], j)]);
                let t = DMatrix::from_fn(m, 1, |j, _| x[(r, j)] - s.a[(r, j)]);
                lhs += &xf * xf.transpose();
                rhs += &xf * t;
            };
            add(&s.c);
            for (k, &t) in self.targets.iter().enumerate() {
                if t != r {
                    add(&s.d[k]);
                }
            }
            let Some(sol) = solve_psd(lhs, &rhs) else {
                continue;
            };
            for (q, &c) in free.iter().enumerate() {
                b[(r, c)] = sol[(q, 0)];
            }
        }
        b
    }
}

/// The joint objective for an explicit parameter tuple.
#[allow(clippy::too_many_arguments)]
pub fn joint_objective(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d_list: &[DMatrix<f64>],
    targets: &[usize],
    m4_obs: &CumulantTensor4,
    m4_int: &[CumulantTensor4],
    kappa: &[f64],
) -> Result<f64> {
    let problem = JointProblem {
        targets: targets.to_vec(),
        m4_obs: m4_obs.clone(),
        m4_int: m4_int.to_vec(),
        kappa: kappa.to_vec(),
    };
    let state = JointState {
        a: a.clone(),
        b: b.clone(),
        c: c.clone(),
        d: d_list.to_vec(),
    };
    problem.objective(&state)
}

// Cholesky, with a small ridge if the normal matrix is singular.
fn solve_psd(lhs: DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = lhs.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    let ridge = 1e-12 * lhs.trace().max(f64::MIN_POSITIVE);
    let mut reg = lhs;
    for q in 0..reg.nrows() {
        reg[(q, q)] += ridge;
    }
    reg.cholesky().map(|ch| ch.solve(rhs))
}

fn check_finite(s: &JointState) -> Result<()> {
    let ok = linalg::all_finite(&s.a)
        && linalg::all_finite(&s.b)
        && linalg::all_finite(&s.c)
        && s.d.iter().all(linalg::all_finite);
    if ok {
        Ok(())
    } else {
        Err(Error::NonFinite("refinement state"))
    }
}

/// Backtracking step on one block. Returns the accepted matrix, if any.
fn armijo(
    x: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    f0: f64,
    step: &mut f64,
    max_halvings: usize,
    mut f: impl FnMut(&DMatrix<f64>) -> Result<f64>,
) -> Result<Option<DMatrix<f64>>> {
    let g2 = grad.norm_squared();
    if g2 == 0.0 || !g2.is_finite() {
        return Ok(None);
    }
    let mut alpha = *step;
    for _ in 0..=max_halvings {
        let cand = x - grad * alpha;
        let fc = f(&cand)?;
        if fc.is_finite() && fc <= f0 - ARMIJO_C * alpha * g2 {
            *step = (alpha * 2.0).min(MAX_STEP);
            return Ok(Some(cand));
        }
        alpha *= 0.5;
    }
    *step = alpha;
    Ok(None)
}

/// Damped Gauss-Newton step on one block; `free` lists the rows the
/// Jacobian columns refer to. Returns the accepted matrix, if any.
#[allow(clippy::too_many_arguments)]
fn lm_step(
    x: &DMatrix<f64>,
    res: &DVector<f64>,
    jac: &DMatrix<f64>,
    free: &[usize],
    f0: f64,
    mu: &mut f64,
    mut f: impl FnMut(&DMatrix<f64>) -> Result<f64>,
) -> Result<Option<DMatrix<f64>>> {
    let m = x.ncols();
    let jtj = jac.transpose() * jac;
    let jtr = jac.transpose() * res;
    if jtr.norm_squared() == 0.0 || !jtr.iter().all(|v| v.is_finite()) {
        return Ok(None);
    }
    for _ in 0..LM_TRIES {
        let mut lhs = jtj.clone();
        for q in 0..lhs.nrows() {
            lhs[(q, q)] += *mu * (jtj[(q, q)] + f64::MIN_POSITIVE);
        }
        if let Some(ch) = lhs.cholesky() {
            let step = ch.solve(&(-&jtr));
            let mut cand = x.clone();
            for (fi, &r) in free.iter().enumerate() {
                for j in 0..m {
                    cand[(r, j)] += step[fi * m + j];
                }
            }
            let fc = f(&cand)?;
            if fc.is_finite() && fc < f0 {
                *mu = (*mu / 3.0).max(1e-12);
                return Ok(Some(cand));
            }
        }
        *mu = (*mu * 4.0).min(1e12);
    }
    Ok(None)
}

/// Cycles `A -> B -> C -> D_1 -> ...`. `B` is kept strictly lower triangular
/// in `order`; row `i` of `D_i` stays zero. A block update is kept only if
/// the full objective does not increase, so the trace is monotone.
pub fn joint_refine(
    init: JointState,
    problem: &JointProblem,
    order: &[usize],
    opts: &RefineOptions,
) -> Result<RefineOutcome> {
    problem.check(&init)?;
    let n = init.c.nrows();
    if order.len() != n || !linalg::is_permutation(order) {
        return Err(Error::Config(
            "refinement order is not a permutation".into(),
        ));
    }
    check_finite(&init)?;
    let mut s = init;
    for (k, &t) in problem.targets.iter().enumerate() {
        s.d[k].row_mut(t).fill(0.0);
    }
    let mut f = problem.objective(&s)?;
    let mut trace = vec![f];
    let mut c_step = opts.initial_step;
    let mut d_steps = vec![opts.initial_step; problem.targets.len()];
    let mut c_mu = 1e-3;
    let mut d_mus = vec![1e-3; problem.targets.len()];
    let mut cycles = 0;
    while cycles < opts.max_cycles && f > ABS_STOP {
        let before = f;

        let mut cand = s.clone();
        cand.a = problem.solve_a(&s);
        let fc = problem.objective(&cand)?;
        if fc <= f {
            s = cand;
            f = fc;
        }

        let mut cand = s.clone();
        cand.b = problem.solve_b(&s, order);
        let fc = problem.objective(&cand)?;
        if fc <= f {
            s = cand;
            f = fc;
        }

        let f0 = problem.c_block(&s, &s.c)?;
        let (res, jac) = problem.c_system(&s)?;
        let all: Vec<usize> = (0..n).collect();
        let mut next = lm_step(&s.c, &res, &jac, &all, f0, &mut c_mu, |x| {
            problem.c_block(&s, x)
        })?;
        if next.is_none() {
            let grad = problem.c_grad(&s)?;
            next = armijo(&s.c, &grad, f0, &mut c_step, opts.max_halvings, |x| {
                problem.c_block(&s, x)
            })?;
        }
        if let Some(c) = next {
            let mut cand = s.clone();
            cand.c = c;
            let fc = problem.objective(&cand)?;
            if fc <= f {
                s = cand;
                f = fc;
            }
        }

        for k in 0..problem.targets.len() {
            let t = problem.targets[k];
            let f0 = problem.d_block(&s, k, &s.d[k])?;
            let (res, jac) = problem.d_system(&s, k)?;
            let free: Vec<usize> = (0..n).filter(|&r| r != t).collect();
            let mut accepted = lm_step(&s.d[k], &res, &jac, &free, f0, &mut d_mus[k], |x| {
                problem.d_block(&s, k, x)
            })?;
            if accepted.is_none() {
                let grad = problem.d_grad(&s, k)?;
                accepted = armijo(
                    &s.d[k],
                    &grad,
                    f0,
                    &mut d_steps[k],
                    opts.max_halvings,
                    |x| problem.d_block(&s, k, x),
                )?;
            }
            if let Some(d) = accepted {
                let mut cand = s.clone();
                cand.d[k] = d;
                let fc = problem.objective(&cand)?;
                if fc <= f {
                    s = cand;
                    f = fc;
                }
            }
        }

        check_finite(&s)?;
        if f > before {
            return Err(Error::ObjectiveIncrease { before, after: f });
        }
        trace.push(f);
        cycles += 1;
        if before - f <= opts.stop_tol * before {
            break;
        }
    }
    Ok(RefineOutcome {
        state: s,
        trace,
        cycles,
    })
}
