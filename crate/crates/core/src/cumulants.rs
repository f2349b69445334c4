//! Second- and fourth-order statistics: centering, covariance, the symmetric
//! fourth-order cumulant tensor, excess kurtosis and whitening.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::simulator::Dataset;

/// Relative eigenvalue floor used by [`whiten`].
pub const DEFAULT_EIG_FLOOR: f64 = 1e-10;

const CENTER_TOL: f64 = 1e-6;

fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut acc = 1usize;
    for t in 0..k {
        acc = acc * (n - t) / (t + 1);
    }
    acc
}

fn sort4(mut idx: [usize; 4]) -> [usize; 4] {
    idx.sort_unstable();
    idx
}

/// Number of distinct orderings of a sorted multi-index.
pub fn multiplicity(sorted: [usize; 4]) -> f64 {
    let mut denom = 1usize;
    let mut run = 1usize;
    for t in 1..4 {
        if sorted[t] == sorted[t - 1] {
            run += 1;
            denom *= run;
        } else {
            run = 1;
        }
    }
    (24 / denom) as f64
}

/// Fully symmetric `dim^4` tensor, stored once per sorted multi-index
/// `i <= j <= k <= l` in combinadic order.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantTensor4 {
    dim: usize,
    packed: Vec<f64>,
}

impl CumulantTensor4 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            packed: vec![0.0; Self::packed_len(dim)],
        }
    }

    pub fn packed_len(dim: usize) -> usize {
        binom(dim + 3, 4)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn packed(&self) -> &[f64] {
        &self.packed
    }

    pub fn from_packed(dim: usize, packed: Vec<f64>) -> Result<Self> {
        if packed.len() != Self::packed_len(dim) {
            return Err(Error::Dimension(format!(
                "{} packed entries for dimension {dim}",
                packed.len()
            )));
        }
        Ok(Self { dim, packed })
    }

    fn offset(sorted: [usize; 4]) -> usize {
        let [i, j, k, l] = sorted;
        i + binom(j + 1, 2) + binom(k + 2, 3) + binom(l + 3, 4)
    }

    pub fn get(&self, idx: [usize; 4]) -> f64 {
        self.packed[Self::offset(sort4(idx))]
    }

    /// Writes one orbit: every permutation of `idx` takes the value.
    pub fn set(&mut self, idx: [usize; 4], value: f64) {
        let off = Self::offset(sort4(idx));
        self.packed[off] = value;
    }

    /// Sorted multi-indices in storage order.
    pub fn indices(dim: usize) -> impl Iterator<Item = [usize; 4]> {
        (0..dim).flat_map(move |l| {
            (0..=l).flat_map(move |k| (0..=k).flat_map(move |j| (0..=j).map(move |i| [i, j, k, l])))
        })
    }

    /// Expands to a dense row-major `dim^4` array.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n * n * n];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        out[((a * n + b) * n + c) * n + d] = self.get([a, b, c, d]);
                    }
                }
            }
        }
        out
    }

    /// Symmetrizes a dense array by averaging each orbit.
    pub fn from_dense(dim: usize, dense: &[f64]) -> Result<Self> {
        let n = dim;
        if dense.len() != n * n * n * n {
            return Err(Error::Dimension(format!(
                "dense array of length {}",
                dense.len()
            )));
        }
        let mut sums = vec![0.0; Self::packed_len(n)];
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        sums[Self::offset(sort4([a, b, c, d]))] +=
                            dense[((a * n + b) * n + c) * n + d];
                    }
                }
            }
        }
        for (off, idx) in Self::indices(n).enumerate() {
            sums[off] /= multiplicity(idx);
        }
        Ok(Self { dim, packed: sums })
    }

    /// `sum_j weights[j] * columns[:, j]^{⊗4}`.
    pub fn from_components(columns: &DMatrix<f64>, weights: &[f64]) -> Result<Self> {
        if columns.ncols() != weights.len() {
            return Err(Error::Dimension(format!(
                "{} columns but {} weights",
                columns.ncols(),
                weights.len()
            )));
        }
        let mut t = Self::zeros(columns.nrows());
        for (j, &w) in weights.iter().enumerate() {
            t.add_rank1(w, columns.column(j).as_slice());
        }
        Ok(t)
    }

    /// `self += w * v^{⊗4}`.
    pub fn add_rank1(&mut self, w: f64, v: &[f64]) {
        if w == 0.0 {
            return;
        }
        for (off, [i, j, k, l]) in Self::indices(self.dim).enumerate() {
            self.packed[off] += w * v[i] * v[j] * v[k] * v[l];
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            dim: self.dim,
            packed: self.packed.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self {
            dim: self.dim,
            packed: self
                .packed
                .iter()
                .zip(&other.packed)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "tensor dimensions {} and {}",
                self.dim, other.dim
            )));
        }
        Ok(())
    }

    /// Frobenius norm squared over all `dim^4` entries.
    pub fn frobenius_sq(&self) -> f64 {
        Self::indices(self.dim)
            .zip(&self.packed)
            .map(|(idx, v)| multiplicity(idx) * v * v)
            .sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    /// `‖self - other‖_F^2`.
    pub fn distance_sq(&self, other: &Self) -> Result<f64> {
        self.check_dim(other)?;
        Ok(Self::indices(self.dim)
            .zip(self.packed.iter().zip(&other.packed))
            .map(|(idx, (a, b))| multiplicity(idx) * (a - b) * (a - b))
            .sum())
    }

    /// `u_a = sum_{b,c,d} T[a,b,c,d] v_b v_c v_d`.
    pub fn contract3(&self, v: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.dim];
        for (idx, &t) in Self::indices(self.dim).zip(&self.packed) {
            if t == 0.0 {
                continue;
            }
            // each distinct slot value a takes the first position; the other
            // three are arranged in 3!/prod(counts!) ways
            for p in 0..4 {
                if p > 0 && idx[p] == idx[p - 1] {
                    continue;
                }
                let mut rest = [0usize; 3];
                let mut r = 0;
                for (q, &x) in idx.iter().enumerate() {
                    if q != p {
                        rest[r] = x;
                        r += 1;
                    }
                }
                let arrangements = if rest[0] == rest[2] {
                    1.0
                } else if rest[0] == rest[1] || rest[1] == rest[2] {
                    3.0
                } else {
                    6.0
                };
                u[idx[p]] += t * arrangements * v[rest[0]] * v[rest[1]] * v[rest[2]];
            }
        }
        u
    }

    /// `T(v, v, v, v)`.
    pub fn contract4(&self, v: &[f64]) -> f64 {
        Self::indices(self.dim)
            .zip(&self.packed)
            .map(|([i, j, k, l], t)| multiplicity([i, j, k, l]) * t * v[i] * v[j] * v[k] * v[l])
            .sum()
    }

    /// Square unfolding: row `(a, b)`, column `(c, d)`.
    pub fn unfold(&self) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_fn(n * n, n * n, |r, c| self.get([r / n, r % n, c / n, c % n]))
    }

    /// Multilinear contraction `T(W, W, W, W)` for `W` of shape `dim x k`.
    pub fn contract_matrix(&self, w: &DMatrix<f64>) -> Result<Self> {
        let n = self.dim;
        if w.nrows() != n {
            return Err(Error::Dimension(format!(
                "contraction matrix has {} rows, tensor dimension is {n}",
                w.nrows()
            )));
        }
        let k = w.ncols();
        // one mode at a time on a dense array; the leading axis is contracted
        // and the new axis is appended, so four passes restore the order
        let mut cur = self.to_dense();
        let mut dims = [n, n, n, n];
        for _ in 0..4 {
            let inner: usize = dims[1] * dims[2] * dims[3];
            let mut next = vec![0.0; inner * k];
            for a in 0..dims[0] {
                for r in 0..inner {
                    let t = cur[a * inner + r];
                    if t == 0.0 {
                        continue;
                    }
                    for p in 0..k {
                        next[r * k + p] += t * w[(a, p)];
                    }
                }
            }
            cur = next;
            dims = [dims[1], dims[2], dims[3], k];
        }
        let mut out = Self::zeros(k);
        for (off, [i, j, kk, l]) in Self::indices(k).enumerate() {
            out.packed[off] = cur[((i * k + j) * k + kk) * k + l];
        }
        Ok(out)
    }

    pub fn to_dump(&self) -> CumulantDump {
        let packed_entries = Self::indices(self.dim)
            .zip(&self.packed)
            .map(|([i, j, k, l], &v)| (format!("{i},{j},{k},{l}"), v))
            .collect();
        CumulantDump {
            dim: self.dim,
            packed_entries,
        }
    }

    pub fn from_dump(dump: &CumulantDump) -> Result<Self> {
        let mut t = Self::zeros(dump.dim);
        if dump.packed_entries.len() != t.packed.len() {
            return Err(Error::Dimension(format!(
                "{} entries in dump for dimension {}",
                dump.packed_entries.len(),
                dump.dim
            )));
        }
        for (key, &v) in &dump.packed_entries {
            let parts: Vec<usize> = key
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("bad multi-index {key:?}: {e}")))?;
            if parts.len() != 4 || parts.iter().any(|&p| p >= dump.dim) {
                return Err(Error::Config(format!("bad multi-index {key:?}")));
            }
            t.set([parts[0], parts[1], parts[2], parts[3]], v);
        }
        Ok(t)
    }
}

/// JSON fixture form of a tensor, keyed by sorted multi-index `"i,j,k,l"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantDump {
    pub dim: usize,
    pub packed_entries: BTreeMap<String, f64>,
}

/// Subtracts column means. Constant columns become exactly zero.
pub fn center(data: &Dataset) -> Result<Dataset> {
    let n_samples = data.n_samples();
    if n_samples < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: n_samples,
        });
    }
    let mut x = data.samples.clone();
    for mut col in x.column_iter_mut() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            col.fill(0.0);
            continue;
        }
        let mean = col.sum() / n_samples as f64;
        col.add_scalar_mut(-mean);
    }
    Ok(Dataset {
        samples: x,
        intervention: data.intervention,
        seed: data.seed,
    })
}

fn check_centered(x: &DMatrix<f64>) -> Result<()> {
    let n = x.nrows() as f64;
    let norm = x
        .column_iter()
        .map(|c| (c.sum() / n).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > CENTER_TOL {
        return Err(Error::NotCentered(norm));
    }
    Ok(())
}

/// `(1/N) X^T X` for centered samples.
pub fn empirical_covariance(data: &Dataset) -> Result<DMatrix<f64>> {
    covariance_of(&data.samples)
}

pub(crate) fn covariance_of(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: x.nrows(),
        });
    }
    check_centered(x)?;
    let cov = x.tr_mul(x) / x.nrows() as f64;
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Fourth moment minus the three Gaussian pairings of the covariance.
pub fn empirical_cumulant4(data: &Dataset) -> Result<CumulantTensor4> {
    let cov = covariance_of(&data.samples)?;
    cumulant_of(&data.samples, &cov)
}

pub(crate) fn cumulant_of(x: &DMatrix<f64>, cov: &DMatrix<f64>) -> Result<CumulantTensor4> {
    let (n_samples, n) = x.shape();
    if n_samples < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: n_samples,
        });
    }
    check_centered(x)?;
    let pair_slot = |i: usize, j: usize| j * (j + 1) / 2 + i;
    let mut pairs: Vec<DVector<f64>> = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            pairs.push(x.column(i).component_mul(&x.column(j)));
        }
    }
    let mut t = CumulantTensor4::zeros(n);
    let inv_n = 1.0 / n_samples as f64;
    for (off, [i, j, k, l]) in CumulantTensor4::indices(n).enumerate() {
        let moment = pairs[pair_slot(i, j)].dot(&pairs[pair_slot(k, l)]) * inv_n;
        let gauss =
            cov[(i, j)] * cov[(k, l)] + cov[(i, k)] * cov[(j, l)] + cov[(i, l)] * cov[(j, k)];
        t.packed[off] = moment - gauss;
    }
    Ok(t)
}

/// `m4 / m2^2 - 3` of the centered samples.
pub fn excess_kurtosis(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: n });
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &x in samples {
        let d = (x - mean) * (x - mean);
        m2 += d;
        m4 += d * d;
    }
    m2 /= n as f64;
    m4 /= n as f64;
    if !(m2 > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Rank-`k` whitening map of a covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitener {
    /// `n x k`, with `W^T Σ W = I_k`.
    pub w: DMatrix<f64>,
    /// `n x k` unwhitening map: `x = w_pinv_t * z` inverts `z = W^T x` on the
    /// retained subspace.
    pub w_pinv_t: DMatrix<f64>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

impl Whitener {
    pub fn k(&self) -> usize {
        self.w.ncols()
    }
}

pub fn whiten(sigma: &DMatrix<f64>, k: usize, noise_var: Option<f64>) -> Result<Whitener> {
    whiten_with_floor(sigma, k, noise_var, DEFAULT_EIG_FLOOR)
}

/// Eigendecomposition of `Σ - noise_var I`; fails if the `k`-th eigenvalue is
/// below `eig_floor` times the largest.
pub fn whiten_with_floor(
    sigma: &DMatrix<f64>,
    k: usize,
    noise_var: Option<f64>,
    eig_floor: f64,
) -> Result<Whitener> {
    let n = sigma.nrows();
    if sigma.ncols() != n {
        return Err(Error::Dimension("covariance is not square".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Dimension(format!(
            "cannot whiten to {k} of {n} dimensions"
        )));
    }
    if !linalg::all_finite(sigma) {
        return Err(Error::NonFinite("covariance"));
    }
    let mut adj = sigma.clone();
    if let Some(nv) = noise_var {
        for i in 0..n {
            adj[(i, i)] -= nv;
        }
    }
    let (vals, vecs) = linalg::sym_eigen_desc(&adj);
    let floor = eig_floor * vals[0].max(0.0);
    if !(vals[k - 1] > floor) {
        return Err(Error::RankDeficient {
            index: k - 1,
            value: vals[k - 1],
            floor,
        });
    }
    let mut w = DMatrix::zeros(n, k);
    let mut w_pinv_t = DMatrix::zeros(n, k);
    for p in 0..k {
        let s = vals[p].sqrt();
        w.set_column(p, &(vecs.column(p) / s));
        w_pinv_t.set_column(p, &(vecs.column(p) * s));
    }
    Ok(Whitener {
        w,
        w_pinv_t,
        eigenvalues: vals[..k].to_vec(),
    })
}

/// `M4(W, W, W, W)`.
pub fn whiten_cumulant(m4: &CumulantTensor4, w: &Whitener) -> Result<CumulantTensor4> {
    m4.contract_matrix(&w.w)
}

/// Centered second- and fourth-order statistics of one dataset, computed once
/// and reused across restarts.
#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub m4: CumulantTensor4,
    pub n_samples: usize,
    /// Per-column variances of the raw data, used for mean-shift tests.
    pub var: Vec<f64>,
}

impl Moments {
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        if !linalg::all_finite(&data.samples) {
            return Err(Error::NonFinite("samples"));
        }
        let mean = data.column_means();
        let centered = center(data)?;
        let cov = covariance_of(&centered.samples)?;
        let m4 = cumulant_of(&centered.samples, &cov)?;
        let var = (0..cov.nrows()).map(|i| cov[(i, i)]).collect();
        Ok(Self {
            mean,
            cov,
            m4,
            n_samples: data.n_samples(),
            var,
        })
    }

    /// Population moments of `x = mixing * h + shift` for unit-variance
    /// latents with excess kurtosis `kappa` and latent mean `latent_mean`.
    pub fn population(
        mixing: &DMatrix<f64>,
        kappa: f64,
        latent_mean: f64,
        shift: &[f64],
    ) -> Result<Self> {
        let n = mixing.nrows();
        let cov = mixing * mixing.transpose();
        let m4 = CumulantTensor4::from_components(mixing, &vec![kappa; mixing.ncols()])?;
        let ones = DVector::from_element(mixing.ncols(), latent_mean);
        let base = mixing * ones;
        let mean = (0..n)
            .map(|r| base[r] + shift.get(r).copied().unwrap_or(0.0))
            .collect();
        let var = (0..n).map(|i| cov[(i, i)]).collect();
        Ok(Self {
            mean,
            cov,
            m4,
            n_samples: usize::MAX,
            var,
        })
    }
}
