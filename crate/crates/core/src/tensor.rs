//! Symmetric rank-one decomposition of fourth-order tensors by the tensor
//! power method with deflation, and ICA mixing recovery built on it.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cumulants::{self, CumulantTensor4, Moments};
use crate::error::{Error, Result};
use crate::linalg;
use crate::simulator::Dataset;

const DEGENERATE_NORM: f64 = 1e-14;

/// Weighted rank-one factors `T ≈ sum_j weights[j] * columns[:, j]^{⊗4}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors {
    pub weights: Vec<f64>,
    /// Unit-norm columns, largest-magnitude entry positive.
    pub columns: DMatrix<f64>,
    pub converged: Vec<bool>,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    /// Random initializations per component (one spectral start is added).
    pub inits: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            inits: 30,
            max_iter: 200,
            tol: 1e-10,
        }
    }
}

/// One update `v <- T(., v, v, v) / ‖T(., v, v, v)‖`, returning the new
/// direction and the Rayleigh value `<T(., v, v, v), v>`.
pub fn power_step(t: &CumulantTensor4, v: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    if v.len() != t.dim() {
        return Err(Error::Dimension(format!(
            "vector of length {} for dimension {}",
            v.len(),
            t.dim()
        )));
    }
    let u = DVector::from_vec(t.contract3(v.as_slice()));
    let lambda = u.dot(v);
    let norm = u.norm();
    if !(norm >= DEGENERATE_NORM) {
        return Err(Error::DegenerateDirection(norm));
    }
    let mut next = u / norm;
    if next.dot(v) < 0.0 {
        next.neg_mut();
    }
    Ok((next, lambda))
}

struct Candidate {
    v: DVector<f64>,
    lambda: f64,
    converged: bool,
}

fn iterate(t: &CumulantTensor4, start: DVector<f64>, opts: &DecomposeOptions) -> Option<Candidate> {
    let mut v = start;
    let mut lambda = 0.0;
    for _ in 0..opts.max_iter {
        let (next, lam) = power_step(t, &v).ok()?;
        let step = (&next - &v).norm();
        v = next;
        lambda = lam;
        if step < opts.tol {
            // report the Rayleigh value at the final point
            let u = DVector::from_vec(t.contract3(v.as_slice()));
            return Some(Candidate {
                lambda: u.dot(&v),
                v,
                converged: true,
            });
        }
    }
    Some(Candidate {
        v,
        lambda,
        converged: false,
    })
}

// Leading eigenvector of the square unfolding, reshaped to a symmetric
// matrix, then that matrix's dominant eigenvector.
fn spectral_start(t: &CumulantTensor4) -> Option<DVector<f64>> {
    let n = t.dim();
    let (vals, vecs) = linalg::sym_eigen_desc(&t.unfold());
    let top = (0..vals.len()).fold(0, |best, p| {
        if vals[p].abs() > vals[best].abs() {
            p
        } else {
            best
        }
    });
    let mat = DMatrix::from_fn(n, n, |r, c| vecs[(r * n + c, top)]);
    let (mvals, mvecs) = linalg::sym_eigen_desc(&mat);
    let top = (0..n).fold(0, |best, p| {
        if mvals[p].abs() > mvals[best].abs() {
            p
        } else {
            best
        }
    });
    let v = mvecs.column(top).into_owned();
    let norm = v.norm();
    (norm > 0.0 && v.iter().all(|x| x.is_finite())).then(|| v / norm)
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let norm: f64 = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Extracts `m` components one at a time. Each is the largest-`|λ|` fixed
/// point over `opts.inits` random starts plus one spectral start, after which
/// it is deflated. Ties go to the earliest start.
pub fn decompose_symmetric4(
    t: &CumulantTensor4,
    m: usize,
    opts: &DecomposeOptions,
    seed: u64,
) -> Result<CpFactors> {
    let n = t.dim();
    if m > n {
        return Err(Error::Dimension(format!(
            "{m} components requested from dimension {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = t.clone();
    let mut columns = DMatrix::zeros(n, m);
    let mut weights = Vec::with_capacity(m);
    let mut converged = Vec::with_capacity(m);
    for comp in 0..m {
        let mut starts: Vec<DVector<f64>> = (0..opts.inits.max(1))
            .map(|_| random_unit(&mut rng, n))
            .collect();
        if let Some(s) = spectral_start(&work) {
            starts.push(s);
        }
        let mut best: Option<Candidate> = None;
        for start in starts {
            let Some(cand) = iterate(&work, start, opts) else {
                continue;
            };
            let better = match &best {
                None => true,
                Some(b) => match (cand.converged, b.converged) {
                    (true, false) => true,
                    (false, true) => false,
                    _ => cand.lambda.abs() > b.lambda.abs(),
                },
            };
            if better {
                best = Some(cand);
            }
        }
        match best {
            Some(Candidate {
                mut v,
                lambda,
                converged: ok,
            }) => {
                work.add_rank1(-lambda, v.as_slice());
                linalg::canonical_sign(&mut v);
                columns.set_column(comp, &v);
                weights.push(lambda);
                converged.push(ok);
            }
            None => {
                columns[(comp % n, comp)] = 1.0;
                weights.push(0.0);
                converged.push(false);
            }
        }
    }
    let fit = CumulantTensor4::from_components(&columns, &weights)?;
    let residual = t.distance_sq(&fit)?.sqrt();
    Ok(CpFactors {
        weights,
        columns,
        converged,
        residual,
    })
}

/// `sum_j kappa[j] * C[:, j]^{⊗4}`.
pub fn model_cumulant(c: &DMatrix<f64>, kappa: &[f64]) -> Result<CumulantTensor4> {
    CumulantTensor4::from_components(c, kappa)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcaOptions {
    pub decompose: DecomposeOptions,
    /// Noise variance subtracted from the covariance before whitening.
    pub noise_var: Option<f64>,
    pub eig_floor: f64,
}

impl Default for IcaOptions {
    fn default() -> Self {
        Self {
            decompose: DecomposeOptions::default(),
            noise_var: None,
            eig_floor: cumulants::DEFAULT_EIG_FLOOR,
        }
    }
}

/// Estimated mixing matrix up to column permutation and sign.
///
/// With unit-variance latents the natural column length is identifiable from
/// the whitening map; it is kept in `scales` next to the unit `columns`.
#[derive(Debug, Clone, PartialEq)]
pub struct IcaEstimate {
    pub columns: DMatrix<f64>,
    pub scales: Vec<f64>,
    /// Estimated excess kurtosis of each component.
    pub weights: Vec<f64>,
    pub converged: Vec<bool>,
    /// Residual of the decomposition in the whitened domain.
    pub residual: f64,
}

impl IcaEstimate {
    /// `columns * diag(scales)`.
    pub fn mixing(&self) -> DMatrix<f64> {
        let mut c = self.columns.clone();
        for (j, &s) in self.scales.iter().enumerate() {
            c.column_mut(j).scale_mut(s);
        }
        c
    }
}

/// center, covariance, whiten to `m`, cumulant, contract, decompose, unwhiten.
pub fn recover_ica_mixing(
    data: &Dataset,
    m: usize,
    opts: &IcaOptions,
    seed: u64,
) -> Result<IcaEstimate> {
    let moments = Moments::from_dataset(data)?;
    ica_from_moments(&moments.cov, &moments.m4, m, opts, seed)
}

pub fn ica_from_moments(
    cov: &DMatrix<f64>,
    m4: &CumulantTensor4,
    m: usize,
    opts: &IcaOptions,
    seed: u64,
) -> Result<IcaEstimate> {
    let n = cov.nrows();
    if m4.dim() != n {
        return Err(Error::Dimension(format!(
            "covariance is {n}x{n}, cumulant has dimension {}",
            m4.dim()
        )));
    }
    if m == 0 || m > n {
        return Err(Error::Dimension(format!(
            "cannot extract {m} components from {n} variables"
        )));
    }
    let whitener = cumulants::whiten_with_floor(cov, m, opts.noise_var, opts.eig_floor)?;
    let tw = cumulants::whiten_cumulant(m4, &whitener)?;
    let cp = decompose_symmetric4(&tw, m, &opts.decompose, seed)?;
    let mut columns = DMatrix::zeros(n, m);
    let mut scales = Vec::with_capacity(m);
    for j in 0..m {
        let mut c = &whitener.w_pinv_t * cp.columns.column(j);
        let s = c.norm();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::NonFinite("unwhitened component"));
        }
        c /= s;
        linalg::canonical_sign(&mut c);
        columns.set_column(j, &c);
        scales.push(s);
    }
    Ok(IcaEstimate {
        columns,
        scales,
        weights: cp.weights,
        converged: cp.converged,
        residual: cp.residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(n: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    #[test]
    fn power_step_examples() {
        let t = CumulantTensor4::from_components(&DMatrix::identity(2, 2), &[2.0, 1.0]).unwrap();
        let (v, lam) = power_step(&t, &e(2, 0)).unwrap();
        assert_eq!((v, lam), (e(2, 0), 2.0));
        let (v, lam) = power_step(&t, &e(2, 1)).unwrap();
        assert_eq!((v, lam), (e(2, 1), 1.0));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (v, _) = power_step(&t, &DVector::from_vec(vec![s, s])).unwrap();
        let expect = DVector::from_vec(vec![2.0, 1.0]) / 5f64.sqrt();
        assert!((v - expect).norm() < 1e-15);
        assert!(power_step(&CumulantTensor4::zeros(2), &e(2, 0)).is_err());
    }

    #[test]
    fn negative_weight_is_a_fixed_point() {
        let t = CumulantTensor4::from_components(&DMatrix::identity(2, 2), &[-2.0, 1.0]).unwrap();
        let (v, lam) = power_step(&t, &e(2, 0)).unwrap();
        assert_eq!(v, e(2, 0));
        assert_eq!(lam, -2.0);
    }

    #[test]
    fn decompose_orthogonal() {
        let t =
            CumulantTensor4::from_components(&DMatrix::identity(3, 3), &[3.0, 3.0, 3.0]).unwrap();
        let cp = decompose_symmetric4(&t, 3, &DecomposeOptions::default(), 1).unwrap();
        let mut found = [false; 3];
        for j in 0..3 {
            assert!((cp.weights[j] - 3.0).abs() < 1e-8);
            let col = cp.columns.column(j);
            let axis = col.iamax();
            assert!((col[axis] - 1.0).abs() < 1e-8);
            found[axis] = true;
        }
        assert!(found.iter().all(|&f| f));
        assert!(cp.residual < 1e-8);
    }

    #[test]
    fn decompose_zero_is_flagged() {
        let cp = decompose_symmetric4(
            &CumulantTensor4::zeros(2),
            1,
            &DecomposeOptions::default(),
            0,
        )
        .unwrap();
        assert_eq!(cp.weights, vec![0.0]);
        assert_eq!(cp.converged, vec![false]);
        assert!((cp.columns.column(0).norm() - 1.0).abs() < 1e-12);
        assert!(decompose_symmetric4(
            &CumulantTensor4::zeros(2),
            3,
            &DecomposeOptions::default(),
            0
        )
        .is_err());
    }

    #[test]
    fn ica_on_population_moments() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]);
        let m = Moments::population(&c, 3.0, 0.0, &[]).unwrap();
        let est = ica_from_moments(&m.cov, &m.m4, 2, &IcaOptions::default(), 5).unwrap();
        let mix = est.mixing();
        for j in 0..2 {
            let col = c.column(j);
            let best = (0..2)
                .map(|k| {
                    (mix.column(k) - col)
                        .norm()
                        .min((mix.column(k) + col).norm())
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-8, "column {j}: {best}");
        }
        assert!(est.weights.iter().all(|w| (w - 3.0).abs() < 1e-8));
    }

    #[test]
    fn model_cumulant_examples() {
        assert_eq!(
            model_cumulant(&DMatrix::identity(2, 2), &[0.0, 0.0]).unwrap(),
            CumulantTensor4::zeros(2)
        );
        let t = model_cumulant(&DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), &[3.0]).unwrap();
        assert_eq!(t.get([0, 0, 0, 0]), 3.0);
        assert_eq!(t.frobenius_sq(), 9.0);
        assert!(model_cumulant(&DMatrix::identity(2, 2), &[1.0]).is_err());
    }
}
