//! Seeded sampling of observational and interventional datasets, and random
//! model generation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    validate_model, Intervention, LatentFamily, LatentSpec, SemIcaModel, DEFAULT_FAITHFULNESS_MIN,
    DEFAULT_RANK_TOL,
};

const LATENT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;

/// Default clamp value is this many observational standard deviations.
pub const DEFAULT_INTERVENTION_MULTIPLIER: f64 = 10.0;

/// `N x n` samples, tagged with the intervention that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: DMatrix<f64>,
    pub intervention: Option<Intervention>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(
        samples: DMatrix<f64>,
        intervention: Option<Intervention>,
        seed: u64,
    ) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if let Some(iv) = intervention {
            if iv.target >= samples.ncols() {
                return Err(Error::IndexOutOfRange {
                    index: iv.target,
                    len: samples.ncols(),
                });
            }
        }
        Ok(Self {
            samples,
            intervention,
            seed,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.samples.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn target(&self) -> Option<usize> {
        self.intervention.map(|iv| iv.target)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n_samples() as f64;
        self.samples.column_iter().map(|c| c.sum() / n).collect()
    }

    /// Writes `x1,...,xn` CSV with one row per sample.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let header: Vec<String> = (1..=self.n_vars()).map(|j| format!("x{j}")).collect();
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.n_vars());
        for row in self.samples.row_iter() {
            record.clear();
            record.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar(&self) -> DatasetSidecar {
        DatasetSidecar {
            intervention_target: self.target(),
            value: self.intervention.map(|iv| iv.value),
            seed: self.seed,
            n: self.n_samples(),
        }
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut f, &self.sidecar())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// Reads a CSV written by [`write_csv`](Dataset::write_csv) with its JSON
    /// sidecar.
    pub fn read(csv_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let sidecar: DatasetSidecar = serde_json::from_reader(File::open(sidecar_path)?)?;
        let mut rdr = csv::Reader::from_path(csv_path)?;
        let n_vars = rdr.headers()?.len();
        let mut values = Vec::new();
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != n_vars {
                return Err(Error::Dimension(format!(
                    "row {rows} has {} fields",
                    rec.len()
                )));
            }
            for field in rec.iter() {
                values.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad number {field:?}: {e}")))?,
                );
            }
            rows += 1;
        }
        if rows != sidecar.n {
            return Err(Error::Config(format!(
                "sidecar says N = {} but CSV has {rows} rows",
                sidecar.n
            )));
        }
        let samples = DMatrix::from_row_slice(rows, n_vars, &values);
        let intervention = match (sidecar.intervention_target, sidecar.value) {
            (Some(target), Some(value)) => Some(Intervention { target, value }),
            (None, None) => None,
            _ => {
                return Err(Error::Config(
                    "sidecar target and value must both be set or null".into(),
                ))
            }
        };
        Dataset::new(samples, intervention, sidecar.seed)
    }
}

/// JSON metadata written next to an exported dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub intervention_target: Option<usize>,
    pub value: Option<f64>,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_latent<R: Rng>(spec: &LatentSpec, rng: &mut R) -> f64 {
    let sd = spec.variance.sqrt();
    let z = match spec.family {
        // variance of Laplace(b) is 2 b^2
        LatentFamily::Laplace => {
            let e: f64 = Exp1.sample(rng);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * e * std::f64::consts::FRAC_1_SQRT_2
        }
        LatentFamily::Rademacher => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        LatentFamily::Uniform => (2.0 * rng.random::<f64>() - 1.0) * 3f64.sqrt(),
    };
    spec.mean + sd * z
}

/// `N x m` i.i.d. latent draws.
pub fn sample_latents(spec: &LatentSpec, m: usize, n_samples: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_for(seed, LATENT_STREAM);
    let mut h = DMatrix::zeros(n_samples, m);
    for r in 0..n_samples {
        for c in 0..m {
            h[(r, c)] = draw_latent(spec, &mut rng);
        }
    }
    h
}

fn sample_noise(n_vars: usize, n_samples: usize, std: f64, seed: u64) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n_samples, n_vars);
    if std == 0.0 {
        return e;
    }
    let mut rng = rng_for(seed, NOISE_STREAM);
    for r in 0..n_samples {
        for c in 0..n_vars {
            let z: f64 = StandardNormal.sample(&mut rng);
            e[(r, c)] = std * z;
        }
    }
    e
}

// Rows x solve x = z + B x, i.e. X^T = (I - B)^{-1} Z^T.
fn propagate(b: &DMatrix<f64>, z: DMatrix<f64>) -> DMatrix<f64> {
    linalg::solve_unit_lower(b, &z.transpose()).transpose()
}

/// Draws `N` rows of `X = C h + (I - B)^{-1} eps`.
pub fn sample_observational(model: &SemIcaModel, n_samples: usize, seed: u64) -> Result<Dataset> {
    if let Some((row, col, value)) = linalg::upper_violation(&model.b, 0.0) {
        return Err(Error::NotCanonical { row, col, value });
    }
    let h = sample_latents(&model.latent, model.m(), n_samples, seed);
    let eps = sample_noise(model.n(), n_samples, model.noise_std, seed);
    let z = h * model.a.transpose() + eps;
    Dataset::new(propagate(&model.b, z), None, seed)
}

/// Draws `N` rows from the system under `Do(X_i = value)`. The clamped
/// equation loses its structural noise, so column `i` is exactly `value`.
pub fn sample_interventional(
    model: &SemIcaModel,
    iv: Intervention,
    n_samples: usize,
    seed: u64,
) -> Result<Dataset> {
    let (a_i, b_i) = model.intervened_matrices(iv.target)?;
    if let Some((row, col, value)) = linalg::upper_violation(&b_i, 0.0) {
        return Err(Error::NotCanonical { row, col, value });
    }
    let h = sample_latents(&model.latent, model.m(), n_samples, seed);
    let eps = sample_noise(model.n(), n_samples, model.noise_std, seed);
    let mut z = h * a_i.transpose() + eps;
    z.column_mut(iv.target).fill(iv.value);
    let mut y = propagate(&b_i, z);
    y.column_mut(iv.target).fill(iv.value);
    Dataset::new(y, Some(iv), seed)
}

/// Population standard deviation of each observed coordinate.
pub fn observational_std(model: &SemIcaModel) -> Result<Vec<f64>> {
    let c = model.reduced_mixing()?;
    let g = model.total_effects()?;
    let cov = &c * c.transpose() * model.latent.variance
        + &g * g.transpose() * (model.noise_std * model.noise_std);
    Ok((0..model.n()).map(|i| cov[(i, i)].sqrt()).collect())
}

/// `Do(X_i = multiplier * sd(X_i))`.
pub fn default_intervention(
    model: &SemIcaModel,
    target: usize,
    multiplier: f64,
) -> Result<Intervention> {
    if target >= model.n() {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: model.n(),
        });
    }
    let sd = observational_std(model)?;
    Ok(Intervention {
        target,
        value: multiplier * sd[target],
    })
}

/// Parameters for [`random_model`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomModelSpec {
    pub n: usize,
    pub m: usize,
    pub edge_prob: f64,
    pub weight_lo: f64,
    pub weight_hi: f64,
    pub noise_std: f64,
    pub latent: LatentSpec,
    /// Relative to the largest singular value of `A`.
    pub rank_tol: f64,
    pub max_attempts: usize,
}

impl RandomModelSpec {
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            edge_prob: 0.5,
            weight_lo: 0.5,
            weight_hi: 1.5,
            noise_std: 0.0,
            latent: LatentSpec::laplace(),
            rank_tol: DEFAULT_RANK_TOL,
            max_attempts: 100,
        }
    }

    fn check(&self) -> Result<()> {
        if self.m > self.n {
            return Err(Error::Config(format!(
                "m exceeds n ({} > {})",
                self.m, self.n
            )));
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("n and m must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::Config(format!(
                "edge_prob {} outside [0, 1]",
                self.edge_prob
            )));
        }
        if !(self.weight_lo > 0.0 && self.weight_lo < self.weight_hi) {
            return Err(Error::Config(format!(
                "need 0 < weight_lo < weight_hi, got [{}, {}]",
                self.weight_lo, self.weight_hi
            )));
        }
        Ok(())
    }
}

fn signed_weight<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let mag = lo + (hi - lo) * rng.random::<f64>();
    if rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

/// Random canonical model: `B` strictly lower triangular with Bernoulli
/// edges, `A` dense. Redraws `A` until it has full column rank.
pub fn random_model(spec: &RandomModelSpec, seed: u64) -> Result<SemIcaModel> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (spec.n, spec.m);
    let mut b = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..r {
            if rng.random::<f64>() < spec.edge_prob {
                b[(r, c)] = signed_weight(&mut rng, spec.weight_lo, spec.weight_hi);
            }
        }
    }
    let faithfulness = spec.weight_lo.min(DEFAULT_FAITHFULNESS_MIN);
    for _ in 0..spec.max_attempts {
        let a = DMatrix::from_fn(n, m, |_, _| {
            signed_weight(&mut rng, spec.weight_lo, spec.weight_hi)
        });
        let model = SemIcaModel::new(a, b.clone(), spec.noise_std, spec.latent)?;
        if validate_model(&model, spec.rank_tol, faithfulness).is_valid() {
            return Ok(model);
        }
    }
    Err(Error::Generation(spec.max_attempts))
}
