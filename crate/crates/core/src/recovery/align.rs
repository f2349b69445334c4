//! Resolving the permutation and sign ambiguity between the observational
//! mixing estimate and each response-matrix estimate.
//!
//! The correct alignment makes `C - D_i` rank one, so candidates are scored
//! by the energy outside the leading singular value of that difference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ColumnAlignment;

pub const DEFAULT_EXACT_LIMIT: usize = 7;
const PARALLEL_ANGLE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    /// Branch-and-bound over all permutations and signs.
    Exact,
    /// Largest-|cosine| matching.
    Greedy,
    /// Exact up to `exact_limit` columns, greedy beyond.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignOptions {
    pub mode: AlignMode,
    pub exact_limit: usize,
    /// Greedy mode only: estimate a per-column scale from projections.
    /// Off by default since both sides carry the natural latent scale.
    pub rescale: bool,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            mode: AlignMode::Auto,
            exact_limit: DEFAULT_EXACT_LIMIT,
            rescale: false,
        }
    }
}

/// Energy of `f` outside its leading singular value, `sum_{k >= 2} σ_k^2`.
pub fn rank1_residual(f: &DMatrix<f64>) -> f64 {
    // summing the tail directly avoids the cancellation of `‖f‖² - σ_1²`
    linalg::singular_values(f)
        .iter()
        .skip(1)
        .map(|s| s * s)
        .sum()
}

/// `rank1_residual(C - apply(al, D))`.
pub fn alignment_residual(
    c_hat: &DMatrix<f64>,
    d_hat: &DMatrix<f64>,
    al: &ColumnAlignment,
) -> Result<f64> {
    let aligned = al.apply(d_hat)?;
    Ok(rank1_residual(&(c_hat - aligned)))
}

/// Smallest angle between the lines spanned by `u` and `v`, computed with the
/// cancellation-free half-angle form.
fn line_angle(u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let (nu, nv) = (u.norm(), v.norm());
    // a zero column carries no direction to confuse with another
    if nu == 0.0 || nv == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    let (a, b) = (u / nu, v / nv);
    let theta = 2.0 * (&a - &b).norm().atan2((&a + &b).norm());
    theta.min(std::f64::consts::PI - theta)
}

fn check_distinct(m: &DMatrix<f64>) -> Result<()> {
    let cols: Vec<DVector<f64>> = m.column_iter().map(|c| c.into_owned()).collect();
    for p in 0..cols.len() {
        for q in (p + 1)..cols.len() {
            if line_angle(&cols[p], &cols[q]) < PARALLEL_ANGLE {
                return Err(Error::AmbiguousAlignment(p, q));
            }
        }
    }
    Ok(())
}

/// One alignment per response matrix. `targets[k]` is the intervened
/// variable of `d_hats[k]`; its row is ignored when comparing directions.
pub fn align_columns(
    c_hat: &DMatrix<f64>,
    d_hats: &[DMatrix<f64>],
    targets: &[usize],
    opts: &AlignOptions,
) -> Result<Vec<ColumnAlignment>> {
    if d_hats.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} response matrices for {} targets",
            d_hats.len(),
            targets.len()
        )));
    }
    let (n, m) = c_hat.shape();
    d_hats
        .iter()
        .zip(targets)
        .map(|(d, &target)| {
            if d.shape() != (n, m) {
                return Err(Error::Dimension(format!(
                    "response matrix is {}x{}, expected {n}x{m}",
                    d.nrows(),
                    d.ncols()
                )));
            }
            if target >= n {
                return Err(Error::IndexOutOfRange {
                    index: target,
                    len: n,
                });
            }
            let exact = match opts.mode {
                AlignMode::Exact => true,
                AlignMode::Greedy => false,
                AlignMode::Auto => m <= opts.exact_limit,
            };
            if exact {
                // parallel columns are still told apart by the residual
                Ok(align_exact(c_hat, d).0)
            } else {
                check_distinct(c_hat)?;
                check_distinct(d)?;
                Ok(align_greedy(c_hat, d, opts.rescale))
            }
        })
        .collect()
}

/// Exhaustive search with pruning: the rank-one residual of a column subset
/// never exceeds that of the full matrix, so partial assignments whose
/// residual already reaches the incumbent are cut.
pub fn align_exact(c_hat: &DMatrix<f64>, d_hat: &DMatrix<f64>) -> (ColumnAlignment, f64) {
    let m = c_hat.ncols();
    let mut search = Search {
        c: c_hat,
        d: d_hat,
        best: f64::INFINITY,
        best_perm: (0..m).collect(),
        best_signs: vec![1.0; m],
        perm: Vec::with_capacity(m),
        signs: Vec::with_capacity(m),
        used: vec![false; m],
    };
    search.descend(&DMatrix::zeros(c_hat.nrows(), 0));
    let al = ColumnAlignment {
        perm: search.best_perm,
        signs: search.best_signs,
        scales: vec![1.0; m],
    };
    (al, search.best)
}

struct Search<'a> {
    c: &'a DMatrix<f64>,
    d: &'a DMatrix<f64>,
    best: f64,
    best_perm: Vec<usize>,
    best_signs: Vec<f64>,
    perm: Vec<usize>,
    signs: Vec<f64>,
    used: Vec<bool>,
}

impl Search<'_> {
    fn descend(&mut self, partial: &DMatrix<f64>) {
        let k = self.perm.len();
        let m = self.c.ncols();
        if k == m {
            let r = rank1_residual(partial);
            if r < self.best {
                self.best = r;
                self.best_perm = self.perm.clone();
                self.best_signs = self.signs.clone();
            }
            return;
        }
        let mut children = Vec::with_capacity(2 * (m - k));
        for p in 0..m {
            if self.used[p] {
                continue;
            }
            for s in [1.0, -1.0] {
                let col = self.c.column(k) - self.d.column(p) * s;
                let next = partial.clone().insert_column(k, 0.0);
                let mut next = next;
                next.set_column(k, &col);
                let r = rank1_residual(&next);
                children.push((r, p, s, next));
            }
        }
        // promising branches first so the incumbent tightens early
        children.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (r, p, s, next) in children {
            if r >= self.best {
                continue;
            }
            self.used[p] = true;
            self.perm.push(p);
            self.signs.push(s);
            self.descend(&next);
            self.signs.pop();
            self.perm.pop();
            self.used[p] = false;
        }
    }
}

/// Every permutation and sign pattern with its residual, in lexicographic
/// order. Intended for small `m`.
pub fn enumerate_alignments(
    c_hat: &DMatrix<f64>,
    d_hat: &DMatrix<f64>,
) -> Vec<(ColumnAlignment, f64)> {
    let m = c_hat.ncols();
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..m).collect();
    permutations(&mut perm, 0, &mut |p| {
        for mask in 0..(1u32 << m) {
            let signs: Vec<f64> = (0..m)
                .map(|j| if mask >> j & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            let al = ColumnAlignment {
                perm: p.to_vec(),
                signs,
                scales: vec![1.0; m],
            };
            let r = rank1_residual(&(c_hat - al.apply(d_hat).expect("shape checked")));
            out.push((al, r));
        }
    });
    out
}

fn permutations(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permutations(p, k + 1, f);
        p.swap(k, i);
    }
}

fn column_cos(u: &DMatrix<f64>, cu: usize, v: &DMatrix<f64>, cv: usize) -> (f64, f64, f64) {
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for r in 0..u.nrows() {
        let (a, b) = (u[(r, cu)], v[(r, cv)]);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let cos = if nu > 0.0 && nv > 0.0 {
        dot / (nu * nv).sqrt()
    } else {
        0.0
    };
    (cos, dot, nv)
}

/// Pairs columns in decreasing order of |cosine|, taking the sign of the
/// cosine.
pub fn align_greedy(c_hat: &DMatrix<f64>, d_hat: &DMatrix<f64>, rescale: bool) -> ColumnAlignment {
    let m = c_hat.ncols();
    let mut pairs = Vec::with_capacity(m * m);
    for j in 0..m {
        for p in 0..m {
            let (cos, dot, nv) = column_cos(c_hat, j, d_hat, p);
            pairs.push((cos.abs(), j, p, cos, dot, nv));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut al = ColumnAlignment::identity(m);
    let (mut row_done, mut col_done) = (vec![false; m], vec![false; m]);
    for (_, j, p, cos, dot, nv) in pairs {
        if row_done[j] || col_done[p] {
            continue;
        }
        row_done[j] = true;
        col_done[p] = true;
        al.perm[j] = p;
        al.signs[j] = if cos < 0.0 { -1.0 } else { 1.0 };
        if rescale && nv > 0.0 {
            let s = dot.abs() / nv;
            if s > 0.0 && s.is_finite() {
                al.scales[j] = s;
            }
        }
    }
    al
}
