//! Exact model algebra for the latent-confounded linear SEM
//! `X = A H + B X + N`.
//!
//! The canonical stored form keeps `B` strictly lower triangular, so every
//! system `(I - B) Y = R` is solved by forward substitution.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph;
use crate::linalg;

pub const DEFAULT_RANK_TOL: f64 = 1e-8;
pub const DEFAULT_FAITHFULNESS_MIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentFamily {
    Laplace,
    Rademacher,
    Uniform,
}

impl LatentFamily {
    /// Excess kurtosis of the standardized family.
    pub fn excess_kurtosis(self) -> f64 {
        match self {
            LatentFamily::Laplace => 3.0,
            LatentFamily::Rademacher => -2.0,
            LatentFamily::Uniform => -1.2,
        }
    }
}

/// Distribution of each independent latent coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub family: LatentFamily,
    pub mean: f64,
    pub variance: f64,
}

impl LatentSpec {
    pub fn new(family: LatentFamily, mean: f64) -> Self {
        Self {
            family,
            mean,
            variance: 1.0,
        }
    }

    /// Unit-variance Laplace with mean one.
    pub fn laplace() -> Self {
        Self::new(LatentFamily::Laplace, 1.0)
    }

    /// Excess kurtosis, which is scale free.
    pub fn kappa(&self) -> f64 {
        self.family.excess_kurtosis()
    }
}

impl Default for LatentSpec {
    fn default() -> Self {
        Self::laplace()
    }
}

/// A hard intervention `Do(X_target = value)`. Observational data carries no
/// intervention (`Option::None` wherever an intervention is optional).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub target: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemIcaModel {
    /// Mixing matrix, `n x m`.
    pub a: DMatrix<f64>,
    /// Observed causal matrix, `n x n`.
    pub b: DMatrix<f64>,
    /// Per-coordinate Gaussian noise standard deviation.
    pub noise_std: f64,
    pub latent: LatentSpec,
    /// Original variable label for each canonical position, when the model was
    /// built from a DAG in arbitrary order.
    pub relabel: Option<Vec<usize>>,
}

impl SemIcaModel {
    /// Builds a model as given. Only shapes are checked; use [`validate`]
    /// for the structural assumptions.
    ///
    /// [`validate`]: SemIcaModel::validate
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        noise_std: f64,
        latent: LatentSpec,
    ) -> Result<Self> {
        let n = a.nrows();
        if b.nrows() != n || b.ncols() != n {
            return Err(Error::Dimension(format!(
                "B is {}x{} but A has {} rows",
                b.nrows(),
                b.ncols(),
                n
            )));
        }
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(Error::Config(format!(
                "noise_std must be nonnegative, got {noise_std}"
            )));
        }
        Ok(Self {
            a,
            b,
            noise_std,
            latent,
            relabel: None,
        })
    }

    /// Builds a model from an arbitrary DAG, permuting variables into an order
    /// where `B` is strictly lower triangular. The permutation is recorded in
    /// [`relabel`](SemIcaModel::relabel).
    pub fn from_dag(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        noise_std: f64,
        latent: LatentSpec,
    ) -> Result<Self> {
        let raw = Self::new(a, b, noise_std, latent)?;
        let n = raw.n();
        // b[to, from] != 0 is an edge from -> to
        let order = graph::topo_order(n, |from, to| raw.b[(to, from)] != 0.0)
            .map_err(|_| Error::CyclicGraph)?;
        let a = linalg::permute_rows(&raw.a, &order);
        let b = linalg::permute_sym(&raw.b, &order);
        let identity = order.iter().enumerate().all(|(k, &v)| k == v);
        Ok(Self {
            a,
            b,
            noise_std,
            latent,
            relabel: if identity { None } else { Some(order) },
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.ncols()
    }

    pub fn validate(&self, rank_tol: f64, faithfulness_min: f64) -> ValidationReport {
        validate_model(self, rank_tol, faithfulness_min)
    }

    fn require_canonical(&self) -> Result<()> {
        match linalg::upper_violation(&self.b, 0.0) {
            Some((row, col, value)) => Err(Error::NotCanonical { row, col, value }),
            None => Ok(()),
        }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.n(),
            });
        }
        Ok(())
    }

    /// `C = (I - B)^{-1} A`.
    pub fn reduced_mixing(&self) -> Result<DMatrix<f64>> {
        self.require_canonical()?;
        Ok(linalg::solve_unit_lower(&self.b, &self.a))
    }

    /// `G = (I - B)^{-1}`, unit lower triangular.
    pub fn total_effects(&self) -> Result<DMatrix<f64>> {
        self.require_canonical()?;
        let n = self.n();
        Ok(linalg::solve_unit_lower(&self.b, &DMatrix::identity(n, n)))
    }

    /// `(A_i, B_i)`: row `i` of both matrices zeroed.
    pub fn intervened_matrices(&self, i: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_index(i)?;
        let mut a = self.a.clone();
        let mut b = self.b.clone();
        a.row_mut(i).fill(0.0);
        b.row_mut(i).fill(0.0);
        Ok((a, b))
    }

    /// `D_i = (I - B_i)^{-1} A_i`. Row `i` of the result is exactly zero.
    pub fn response_matrix(&self, i: usize) -> Result<DMatrix<f64>> {
        self.require_canonical()?;
        let (a_i, b_i) = self.intervened_matrices(i)?;
        Ok(linalg::solve_unit_lower(&b_i, &a_i))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(s)?;
        doc.into_model()
    }
}

/// On-disk model document.
#[derive(Debug, Serialize, Deserialize)]
struct ModelDoc {
    n: usize,
    m: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    noise_std: f64,
    latent: LatentSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    relabel: Option<Vec<usize>>,
}

impl From<&SemIcaModel> for ModelDoc {
    fn from(model: &SemIcaModel) -> Self {
        Self {
            n: model.n(),
            m: model.m(),
            a: linalg::to_rows(&model.a),
            b: linalg::to_rows(&model.b),
            noise_std: model.noise_std,
            latent: model.latent,
            relabel: model.relabel.clone(),
        }
    }
}

impl ModelDoc {
    fn into_model(self) -> Result<SemIcaModel> {
        if self.a.len() != self.n || self.b.len() != self.n {
            return Err(Error::Dimension(format!(
                "expected {} rows in A and B",
                self.n
            )));
        }
        let a = linalg::from_rows(&self.a, self.m)?;
        let b = linalg::from_rows(&self.b, self.n)?;
        let mut model = SemIcaModel::new(a, b, self.noise_std, self.latent)?;
        if let Some(relabel) = self.relabel {
            if relabel.len() != self.n || !linalg::is_permutation(&relabel) {
                return Err(Error::Config("relabel is not a permutation".into()));
            }
            model.relabel = Some(relabel);
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooManyLatents {
        n: usize,
        m: usize,
    },
    RankDeficient {
        sigma_min: f64,
        sigma_max: f64,
    },
    NonzeroDiagonal {
        index: usize,
        value: f64,
    },
    NotLowerTriangular {
        row: usize,
        col: usize,
        value: f64,
    },
    Unfaithful {
        matrix: char,
        row: usize,
        col: usize,
        value: f64,
    },
    NonUnitLatentVariance(f64),
    NonFinite,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooManyLatents { n, m } => write!(f, "m = {m} exceeds n = {n}"),
            Violation::RankDeficient {
                sigma_min,
                sigma_max,
            } => write!(
                f,
                "A is rank deficient: smallest singular value {sigma_min:e} (largest {sigma_max:e})"
            ),
            Violation::NonzeroDiagonal { index, value } => {
                write!(
                    f,
                    "B has nonzero diagonal entry ({index}, {index}) = {value}"
                )
            }
            Violation::NotLowerTriangular { row, col, value } => {
                write!(
                    f,
                    "B is not strictly lower triangular: entry ({row}, {col}) = {value}"
                )
            }
            Violation::Unfaithful {
                matrix,
                row,
                col,
                value,
            } => write!(
                f,
                "{matrix} entry ({row}, {col}) = {value} is below the faithfulness threshold"
            ),
            Violation::NonUnitLatentVariance(v) => write!(f, "latent variance is {v}, expected 1"),
            Violation::NonFinite => write!(f, "model contains non-finite entries"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(f, "valid");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "- {v}")?;
        }
        Ok(())
    }
}

/// Checks the structural assumptions. Never fails; every violation found is
/// listed in the report.
///
/// `rank_tol` is relative to the largest singular value of `A`.
pub fn validate_model(
    model: &SemIcaModel,
    rank_tol: f64,
    faithfulness_min: f64,
) -> ValidationReport {
    let mut violations = Vec::new();
    let (n, m) = (model.n(), model.m());

    if !linalg::all_finite(&model.a) || !linalg::all_finite(&model.b) {
        violations.push(Violation::NonFinite);
        return ValidationReport { violations };
    }
    if m > n {
        violations.push(Violation::TooManyLatents { n, m });
    }
    if m > 0 {
        let sv = linalg::singular_values(&model.a);
        let sigma_max = sv[0];
        let sigma_min = if m <= n { sv[m - 1] } else { 0.0 };
        if !(sigma_min > rank_tol * sigma_max) {
            violations.push(Violation::RankDeficient {
                sigma_min,
                sigma_max,
            });
        }
    }
    for i in 0..n {
        let v = model.b[(i, i)];
        if v != 0.0 {
            violations.push(Violation::NonzeroDiagonal { index: i, value: v });
        }
    }
    for r in 0..n {
        for c in (r + 1)..n {
            let v = model.b[(r, c)];
            if v != 0.0 {
                violations.push(Violation::NotLowerTriangular {
                    row: r,
                    col: c,
                    value: v,
                });
            }
        }
    }
    for (name, mat) in [('A', &model.a), ('B', &model.b)] {
        for r in 0..mat.nrows() {
            for c in 0..mat.ncols() {
                let v = mat[(r, c)];
                if v != 0.0 && v.abs() < faithfulness_min {
                    violations.push(Violation::Unfaithful {
                        matrix: name,
                        row: r,
                        col: c,
                        value: v,
                    });
                }
            }
        }
    }
    if model.latent.variance != 1.0 {
        violations.push(Violation::NonUnitLatentVariance(model.latent.variance));
    }
    ValidationReport { violations }
}

/// Column re-labelling: result column `j` is
/// `signs[j] * scales[j] * M[:, perm[j]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnAlignment {
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
    pub scales: Vec<f64>,
}

impl ColumnAlignment {
    pub fn identity(m: usize) -> Self {
        Self {
            perm: (0..m).collect(),
            signs: vec![1.0; m],
            scales: vec![1.0; m],
        }
    }

    pub fn new(perm: Vec<usize>, signs: Vec<f64>, scales: Vec<f64>) -> Result<Self> {
        let al = Self {
            perm,
            signs,
            scales,
        };
        al.check()?;
        Ok(al)
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    fn check(&self) -> Result<()> {
        let m = self.perm.len();
        if self.signs.len() != m || self.scales.len() != m {
            return Err(Error::Dimension(
                "alignment vectors differ in length".into(),
            ));
        }
        if !linalg::is_permutation(&self.perm) {
            return Err(Error::Config(format!(
                "{:?} is not a permutation",
                self.perm
            )));
        }
        if self.signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::Config("alignment signs must be +1 or -1".into()));
        }
        if self.scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("alignment scales must be positive".into()));
        }
        Ok(())
    }

    pub fn apply(&self, mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        apply_alignment(mat, self)
    }
}

pub fn apply_alignment(mat: &DMatrix<f64>, al: &ColumnAlignment) -> Result<DMatrix<f64>> {
    al.check()?;
    if mat.ncols() != al.len() {
        return Err(Error::Dimension(format!(
            "alignment for {} columns applied to a matrix with {}",
            al.len(),
            mat.ncols()
        )));
    }
    let mut out = DMatrix::zeros(mat.nrows(), mat.ncols());
    for j in 0..al.len() {
        let factor = al.signs[j] * al.scales[j];
        out.set_column(j, &(mat.column(al.perm[j]) * factor));
    }
    Ok(out)
}
