//! Simulation harness: sample-size sweeps and the intervention-count and
//! latent-count ablations, written as plot-ready CSV.
//!
//! Every cell of the grid draws its own model and datasets from the cell
//! seed, so rows are reproducible one by one and independent of `jobs`.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LatentFamily, LatentSpec, SemIcaModel};
use crate::recovery::{evaluate, recover_exact, recover_pipeline, RecoveryOptions, RecoveryResult};
use crate::simulator::{
    default_intervention, random_model, sample_interventional, sample_observational, Dataset,
    RandomModelSpec, DEFAULT_INTERVENTION_MULTIPLIER,
};

pub const CSV_HEADER: &str =
    "n,m,N,seed,targets,m_assumed,mse_B,mse_A,order_correct,objective_final,error,wall_ms";

/// Which subset of variables receives an intervention in the ablation.
pub const TARGET_SUBSET_RULE: &str = "prefix of the true causal order";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "N_grid")]
    pub n_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    pub noise_std: f64,
    pub restarts: usize,
    /// Intervened variables; all when absent.
    pub targets: Option<Vec<usize>>,
    /// Latent count handed to the recovery; `m` when absent.
    pub m_assumed: Option<usize>,
    /// Values swept by the latent ablation; `m - 1, m, m + 1` capped to
    /// `[1, n]` when absent.
    pub m_assumed_grid: Option<Vec<usize>>,
    /// Subset sizes swept by the intervention ablation; `1..=n` when absent.
    pub target_counts: Option<Vec<usize>>,
    pub output_path: Option<PathBuf>,
    pub exact_moments: bool,
    pub jobs: usize,
    pub edge_prob: f64,
    pub weight_lo: f64,
    pub weight_hi: f64,
    pub latent_family: LatentFamily,
    pub latent_mean: f64,
    /// Intervention value in observational standard deviations.
    pub intervention_multiplier: f64,
    /// Hand the latent kurtosis to the recovery instead of estimating it.
    pub known_kappa: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 3,
            m: 3,
            n_grid: vec![1_000, 10_000, 100_000],
            seeds: (0..5).collect(),
            noise_std: 1e-3f64.sqrt(),
            restarts: 20,
            targets: None,
            m_assumed: None,
            m_assumed_grid: None,
            target_counts: None,
            output_path: None,
            exact_moments: false,
            jobs: 1,
            edge_prob: 0.5,
            weight_lo: 0.5,
            weight_hi: 1.5,
            latent_family: LatentFamily::Laplace,
            latent_mean: 1.0,
            intervention_multiplier: DEFAULT_INTERVENTION_MULTIPLIER,
            known_kappa: true,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the file name ends in `.json`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n == 0 || self.m == 0 {
            return bad("n and m must be positive".into());
        }
        if self.m > self.n {
            return bad(format!("m exceeds n ({} > {})", self.m, self.n));
        }
        if self.n_grid.is_empty() {
            return bad("N_grid is empty".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("N_grid must be strictly ascending".into());
        }
        if self.n_grid[0] == 0 {
            return bad("N_grid entries must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!(
                "noise_std {} is not a finite nonnegative number",
                self.noise_std
            ));
        }
        if let Some(t) = &self.targets {
            if let Some(&i) = t.iter().find(|&&i| i >= self.n) {
                return bad(format!("target {i} out of range for n = {}", self.n));
            }
            let mut s = t.clone();
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return bad("duplicate target".into());
            }
        }
        let check_m = |k: usize| {
            if k == 0 {
                Err(Error::Config("m_assumed must be at least 1".into()))
            } else if k > self.n {
                Err(Error::Config(format!(
                    "m_assumed {k} exceeds n = {}",
                    self.n
                )))
            } else {
                Ok(())
            }
        };
        if let Some(k) = self.m_assumed {
            check_m(k)?;
        }
        for &k in self.m_assumed_grid.iter().flatten() {
            check_m(k)?;
        }
        if let Some(&k) = self.target_counts.iter().flatten().find(|&&k| k > self.n) {
            return bad(format!("target count {k} exceeds n = {}", self.n));
        }
        if !(0.0..=1.0).contains(&self.edge_prob)
            || !(self.weight_lo > 0.0 && self.weight_lo < self.weight_hi)
        {
            return bad("edge_prob must lie in [0, 1] and 0 < weight_lo < weight_hi".into());
        }
        Ok(())
    }

    pub fn model_spec(&self) -> RandomModelSpec {
        RandomModelSpec {
            edge_prob: self.edge_prob,
            weight_lo: self.weight_lo,
            weight_hi: self.weight_hi,
            noise_std: self.noise_std,
            latent: LatentSpec::new(self.latent_family, self.latent_mean),
            ..RandomModelSpec::new(self.n, self.m)
        }
    }

    /// `{m - 1, m, m + 1}` restricted to `1..=n`.
    pub fn default_m_grid(&self) -> Vec<usize> {
        let mut g: Vec<usize> = [self.m.saturating_sub(1), self.m, self.m + 1]
            .into_iter()
            .map(|k| k.clamp(1, self.n))
            .collect();
        g.dedup();
        g
    }
}

/// One line of the output CSV. Metric fields are NaN on error rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub seed: u64,
    /// Number of intervened variables.
    pub targets: usize,
    pub m_assumed: usize,
    #[serde(rename = "mse_B")]
    pub mse_b: f64,
    #[serde(rename = "mse_A")]
    pub mse_a: f64,
    pub order_correct: bool,
    pub objective_final: f64,
    pub error: String,
    pub wall_ms: u64,
}

impl Row {
    pub fn is_error(&self) -> bool {
        !self.error.is_empty()
    }
}

/// One grid cell before it runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub n_samples: usize,
    pub seed: u64,
    pub targets: Vec<usize>,
    pub m_assumed: usize,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one dataset of a cell: `slot` 0 is observational, `1 + i` the
/// intervention on variable `i`. Independent of which other targets run.
pub fn dataset_seed(seed: u64, n_samples: usize, slot: usize) -> u64 {
    mix(mix(seed, n_samples as u64), slot as u64)
}

/// Observational dataset and one interventional dataset per target, drawn
/// for a cell.
pub fn draw_datasets(
    model: &SemIcaModel,
    n_samples: usize,
    seed: u64,
    targets: &[usize],
    multiplier: f64,
) -> Result<(Dataset, Vec<Dataset>)> {
    let obs = sample_observational(model, n_samples, dataset_seed(seed, n_samples, 0))?;
    let intvs = targets
        .iter()
        .map(|&t| {
            let iv = default_intervention(model, t, multiplier)?;
            sample_interventional(model, iv, n_samples, dataset_seed(seed, n_samples, 1 + t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((obs, intvs))
}

fn recovery_options(cfg: &ExperimentConfig, model: &SemIcaModel, cell: &Cell) -> RecoveryOptions {
    RecoveryOptions {
        restarts: cfg.restarts,
        seed: cell.seed,
        targets: Some(cell.targets.clone()),
        kappa: cfg.known_kappa.then(|| model.latent.kappa()),
        ..RecoveryOptions::default()
    }
}

/// Model, recovery result and metrics of one cell.
pub fn run_cell_result(
    cfg: &ExperimentConfig,
    cell: &Cell,
) -> Result<(SemIcaModel, RecoveryResult)> {
    let model = random_model(&cfg.model_spec(), cell.seed)?;
    let opts = recovery_options(cfg, &model, cell);
    let mut res = if cfg.exact_moments {
        if cell.m_assumed != cfg.m {
            return Err(Error::Config("exact moments need m_assumed = m".into()));
        }
        recover_exact(&model, &opts, cell.seed)?
    } else {
        let (obs, intvs) = draw_datasets(
            &model,
            cell.n_samples,
            cell.seed,
            &cell.targets,
            cfg.intervention_multiplier,
        )?;
        recover_pipeline(&obs, &intvs, cell.m_assumed, &opts)?
    };
    res.metrics = Some(evaluate(&model, &res)?);
    Ok((model, res))
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

/// Runs one cell. Failures, panics included, become an error row.
pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell) -> Row {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| run_cell_result(cfg, cell)));
    let mut row = Row {
        n: cfg.n,
        m: cfg.m,
        n_samples: cell.n_samples,
        seed: cell.seed,
        targets: cell.targets.len(),
        m_assumed: cell.m_assumed,
        mse_b: f64::NAN,
        mse_a: f64::NAN,
        order_correct: false,
        objective_final: f64::NAN,
        error: String::new(),
        wall_ms: 0,
    };
    match outcome {
        Ok(Ok((_, res))) => {
            let met = res
                .metrics
                .as_ref()
                .expect("metrics set by run_cell_result");
            row.mse_b = met.mse_b;
            row.mse_a = met.mse_a;
            row.order_correct = met.order_correct;
            row.objective_final = res.objective_final();
        }
        Ok(Err(e)) => row.error = e.to_string(),
        Err(p) => row.error = format!("panic: {}", panic_message(p)),
    }
    row.wall_ms = start.elapsed().as_millis() as u64;
    row
}

fn all_targets(cfg: &ExperimentConfig) -> Vec<usize> {
    cfg.targets.clone().unwrap_or_else(|| (0..cfg.n).collect())
}

/// Cells of the sample-size sweep, in output order.
pub fn sweep_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let targets = all_targets(cfg);
    let m_assumed = cfg.m_assumed.unwrap_or(cfg.m);
    let mut cells = Vec::new();
    for &n_samples in &cfg.n_grid {
        for &seed in &cfg.seeds {
            cells.push(Cell {
                n_samples,
                seed,
                targets: targets.clone(),
                m_assumed,
            });
        }
    }
    cells
}

/// Sweep cells repeated for every subset size. Generated models are
/// canonical, so the true causal order is the index order and a prefix of
/// size `k` is `0..k`.
pub fn intervention_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let counts = cfg
        .target_counts
        .clone()
        .unwrap_or_else(|| (1..=cfg.n).collect());
    let mut cells = Vec::new();
    for k in counts {
        for mut c in sweep_cells(cfg) {
            c.targets = (0..k).collect();
            cells.push(c);
        }
    }
    cells
}

/// Sweep cells repeated for every assumed latent count.
pub fn latent_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let grid = cfg
        .m_assumed_grid
        .clone()
        .or(cfg.m_assumed.map(|k| vec![k]))
        .unwrap_or_else(|| cfg.default_m_grid());
    let mut cells = Vec::new();
    for k in grid {
        for mut c in sweep_cells(cfg) {
            c.m_assumed = k;
            cells.push(c);
        }
    }
    cells
}

/// Runs the cells on a pool of `cfg.jobs` workers; rows come back in cell
/// order.
pub fn run_cells(cfg: &ExperimentConfig, cells: &[Cell]) -> Result<Vec<Row>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(|c| run_cell(cfg, c)).collect()))
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    cfg.validate()?;
    run_cells(cfg, &sweep_cells(cfg))
}

pub fn ablate_interventions(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    cfg.validate()?;
    run_cells(cfg, &intervention_cells(cfg))
}

pub fn ablate_latents(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    cfg.validate()?;
    if cfg.exact_moments && latent_cells(cfg).iter().any(|c| c.m_assumed != cfg.m) {
        return Err(Error::Config("exact moments need m_assumed = m".into()));
    }
    run_cells(cfg, &latent_cells(cfg))
}

pub fn rows_to_csv(rows: &[Row]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        return Ok(format!("{CSV_HEADER}\n"));
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes the CSV through a temporary file so a failed run never leaves a
/// partial one behind.
pub fn write_csv(rows: &[Row], path: &Path) -> Result<()> {
    let text = rows_to_csv(rows)?;
    let tmp = path.with_extension("csv.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Run metadata stored next to the CSV.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata<'a> {
    pub command: &'a str,
    pub config: &'a ExperimentConfig,
    pub target_subsets: &'a str,
    pub rows: usize,
    pub error_rows: usize,
}

pub fn write_metadata(meta: &RunMetadata, csv_path: &Path) -> Result<PathBuf> {
    let path = csv_path.with_extension("meta.json");
    std::fs::write(&path, serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(path)
}

/// Median of the finite values, `NaN` when there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
