//! One line per acceptance criterion. Exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use semica::cumulants::{center, empirical_cumulant4, excess_kurtosis, CumulantTensor4};
use semica::experiments::{self, median, Cell, ExperimentConfig};
use semica::recovery::evaluate::align_to_truth;
use semica::recovery::{
    joint_refine, recover_exact, JointProblem, JointState, RecoveryOptions, RefineOptions,
};
use semica::simulator::{random_model, sample_latents, Dataset, RandomModelSpec};
use semica::tensor::{
    decompose_symmetric4, ica_from_moments, model_cumulant, DecomposeOptions, IcaOptions,
};
use semica::{LatentSpec, SemIcaModel};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

// Exact-moment runs shared by the first two criteria.
struct ExactRun {
    b_err: f64,
    a_err: f64,
    max_ratio: f64,
}

fn exact_runs() -> (Vec<ExactRun>, Duration) {
    let t0 = Instant::now();
    let opts = RecoveryOptions {
        restarts: 1,
        ..Default::default()
    };
    let mut out = Vec::new();
    for n in 2..=6 {
        for seed in 0..20u64 {
            let model = random_model(&RandomModelSpec::new(n, n), seed).expect("model");
            let res = recover_exact(&model, &opts, seed).expect("exact recovery");
            out.push(ExactRun {
                b_err: inf_norm(&(&res.b_hat - &model.b)),
                a_err: inf_norm(&(align_to_truth(&model.a, &res.a_hat) - &model.a)),
                max_ratio: res.rank1_ratios.iter().copied().fold(0.0, f64::max),
            });
        }
    }
    (out, t0.elapsed())
}

fn criterion1(runs: &[ExactRun], took: Duration) -> Outcome {
    let b = runs.iter().map(|r| r.b_err).fold(0.0, f64::max);
    let a = runs.iter().map(|r| r.a_err).fold(0.0, f64::max);
    let pass = b < 1e-9 && a < 1e-9 && took < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "{} models, worst |B-B^|inf {b:.2e}, |A-A^|inf {a:.2e}, {:.1}s",
            runs.len(),
            took.as_secs_f64()
        ),
    )
}

fn criterion2(runs: &[ExactRun]) -> Outcome {
    let worst = runs.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
    outcome(worst < 1e-10, format!("worst s2/s1 {worst:.2e}"))
}

fn criterion3() -> Outcome {
    let t0 = Instant::now();
    let h = sample_latents(&LatentSpec::laplace(), 1, 100_000, 0);
    let k = excess_kurtosis(h.as_slice()).expect("kurtosis");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = DMatrix::from_fn(100_000, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let data = center(&Dataset::new(x, None, 0).expect("dataset")).expect("centering");
    let m4 = empirical_cumulant4(&data).expect("cumulant");
    let worst = m4.packed().iter().map(|v| v.abs()).fold(0.0, f64::max);
    let pass = (k - 3.0).abs() <= 0.3 && worst <= 0.05;
    outcome(
        pass,
        format!(
            "Laplace kurtosis {k:.3}, Gaussian max |M4| {worst:.4}, {:.1}s",
            t0.elapsed().as_secs_f64()
        ),
    )
}

// Per-cell (mse_B, max |A - A^|) for a configuration.
struct SweepStats {
    grid: Vec<usize>,
    mse_b: Vec<Vec<f64>>,
    max_err_a: Vec<Vec<f64>>,
    errors: usize,
}

fn run_grid(cfg: &ExperimentConfig, cells: &[Cell]) -> SweepStats {
    let results: Vec<_> = cells
        .par_iter()
        .map(|cell| (cell.n_samples, experiments::run_cell_result(cfg, cell)))
        .collect();
    let mut stats = SweepStats {
        grid: cfg.n_grid.clone(),
        mse_b: vec![Vec::new(); cfg.n_grid.len()],
        max_err_a: vec![Vec::new(); cfg.n_grid.len()],
        errors: 0,
    };
    for (n_samples, r) in results {
        let slot = cfg
            .n_grid
            .iter()
            .position(|&v| v == n_samples)
            .expect("grid value");
        match r {
            Ok((_, res)) => {
                let m = res.metrics.expect("metrics");
                stats.mse_b[slot].push(m.mse_b);
                stats.max_err_a[slot].push(m.max_abs_err_a);
            }
            Err(_) => stats.errors += 1,
        }
    }
    stats
}

fn medians(v: &[Vec<f64>]) -> Vec<f64> {
    v.iter().map(|x| median(x.iter().copied())).collect()
}

fn sweep_config(n: usize) -> ExperimentConfig {
    ExperimentConfig {
        n,
        m: n,
        ..ExperimentConfig::default()
    }
}

fn criterion4(s3: &SweepStats, s4: &SweepStats, took: Duration) -> Outcome {
    let (m3, m4) = (medians(&s3.mse_b), medians(&s4.mse_b));
    let pass = strictly_decreasing(&m3)
        && strictly_decreasing(&m4)
        && m3[m3.len() - 1] < 0.01
        && m4[m4.len() - 1] < 0.05
        && s3.errors + s4.errors == 0
        && took < Duration::from_secs(15 * 60);
    outcome(
        pass,
        format!(
            "N {:?}: n=3 median mse_B {}, n=4 {}, {} failed cells, {:.1}s",
            s3.grid,
            fmt(&m3),
            fmt(&m4),
            s3.errors + s4.errors,
            took.as_secs_f64()
        ),
    )
}

fn criterion5(s4: &SweepStats) -> Outcome {
    let n_max = *s4.grid.last().expect("grid");
    let cfg = ExperimentConfig {
        n_grid: vec![n_max],
        target_counts: Some(vec![3]),
        ..sweep_config(4)
    };
    let cells = experiments::intervention_cells(&cfg);
    let partial = run_grid(&cfg, &cells);
    let full = median(s4.mse_b[s4.grid.len() - 1].iter().copied());
    let part = median(partial.mse_b[0].iter().copied());
    let ratio = part / full;
    outcome(
        partial.errors == 0 && ratio <= 2.0,
        format!("N={n_max}: 3 targets {part:.2e}, 4 targets {full:.2e}, ratio {ratio:.2}"),
    )
}

fn criterion6(s3: &SweepStats) -> Outcome {
    let cfg = ExperimentConfig {
        m_assumed_grid: Some(vec![2]),
        ..sweep_config(3)
    };
    let cells = experiments::latent_cells(&cfg);
    let under = run_grid(&cfg, &cells);
    let (at_m, below) = (medians(&s3.mse_b), medians(&under.mse_b));
    let pass = under.errors == 0 && at_m.iter().zip(&below).all(|(a, b)| a <= b);
    outcome(
        pass,
        format!(
            "median mse_B m_assumed=3 {}, m_assumed=2 {}, {} failed cells",
            fmt(&at_m),
            fmt(&below),
            under.errors
        ),
    )
}

fn criterion7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_angle: f64 = 0.0;
    for m in 1..=4 {
        for trial in 0..5u64 {
            let n = m + (trial as usize % 3);
            let raw = DMatrix::from_fn(n, m, |_, _| rng.random::<f64>() - 0.5);
            let v = common::orthonormalize(&raw);
            let w: Vec<f64> = (0..m)
                .map(|j| {
                    if j % 2 == 0 {
                        1.0 + j as f64
                    } else {
                        -1.5 - j as f64
                    }
                })
                .collect();
            let t = CumulantTensor4::from_components(&v, &w).expect("tensor");
            let cp = decompose_symmetric4(&t, m, &DecomposeOptions::default(), trial)
                .expect("decomposition");
            worst_angle = worst_angle.max(common::worst_column_angle(&v, &cp.columns));
        }
    }
    let cases = [
        (
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]),
            [3.0, 3.0],
        ),
        (
            DMatrix::from_row_slice(2, 2, &[0.8, -1.1, 0.6, 0.9]),
            [3.0, -1.2],
        ),
        (
            DMatrix::from_row_slice(2, 2, &[1.4, 0.3, -0.7, 1.2]),
            [-2.0, 3.0],
        ),
    ];
    let mut worst_grid: f64 = 0.0;
    for (c, kappa) in cases {
        let m4 = model_cumulant(&c, &kappa).expect("cumulant");
        let est = ica_from_moments(&(&c * c.transpose()), &m4, 2, &IcaOptions::default(), 1)
            .expect("ica");
        for o in common::grid_oracle(&c, &kappa) {
            let a = est
                .columns
                .column_iter()
                .map(|col| common::line_angle(&o, col.as_slice()))
                .fold(f64::INFINITY, f64::min);
            worst_grid = worst_grid.max(a);
        }
    }
    outcome(
        worst_angle < 1e-8 && worst_grid < 0.01,
        format!(
            "orthogonal worst angle {worst_angle:.2e} rad, grid oracle worst {worst_grid:.4} rad"
        ),
    )
}

fn truth_state(model: &SemIcaModel) -> (JointState, JointProblem) {
    let n = model.n();
    let kappa = vec![model.latent.kappa(); model.m()];
    let c = model.reduced_mixing().expect("C");
    let d: Vec<DMatrix<f64>> = (0..n)
        .map(|i| model.response_matrix(i).expect("D"))
        .collect();
    let problem = JointProblem {
        targets: (0..n).collect(),
        m4_obs: model_cumulant(&c, &kappa).expect("cumulant"),
        m4_int: d
            .iter()
            .map(|x| model_cumulant(x, &kappa).expect("cumulant"))
            .collect(),
        kappa,
    };
    let state = JointState {
        a: model.a.clone(),
        b: model.b.clone(),
        c,
        d,
    };
    (state, problem)
}

fn criterion8() -> Outcome {
    let opts = RefineOptions {
        max_cycles: 100,
        ..Default::default()
    };
    let mut worst_rise = f64::NEG_INFINITY;
    let mut worst_truth: f64 = 0.0;
    for seed in 0..50u64 {
        let n = 2 + seed as usize % 3;
        let model = random_model(&RandomModelSpec::new(n, n), seed).expect("model");
        let (truth, p) = truth_state(&model);
        let order: Vec<usize> = (0..n).collect();
        let stay = joint_refine(truth.clone(), &p, &order, &opts).expect("refine");
        worst_truth = stay.trace.iter().copied().fold(worst_truth, f64::max);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.02 + 0.5 * rng.random::<f64>();
        let mut s = truth;
        let mut jitter = |x: &mut DMatrix<f64>| {
            x.iter_mut()
                .for_each(|v| *v += scale * (rng.random::<f64>() - 0.5))
        };
        jitter(&mut s.a);
        jitter(&mut s.c);
        s.d.iter_mut().for_each(&mut jitter);
        for r in 0..n {
            for c in 0..r {
                s.b[(r, c)] += scale * (rng.random::<f64>() - 0.5);
            }
        }
        let out = joint_refine(s, &p, &order, &opts).expect("refine");
        for w in out.trace.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
    }
    outcome(
        worst_rise <= 1e-12 && worst_truth <= 1e-12,
        format!("50 starts, largest step change {worst_rise:.2e}, objective from truth {worst_truth:.2e}"),
    )
}

fn criterion9(s3: &SweepStats) -> Outcome {
    let m = medians(&s3.max_err_a);
    outcome(
        strictly_decreasing(&m),
        format!("n=3 median max|A-A^| {}", fmt(&m)),
    )
}

fn main() {
    let jobs = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .ok();

    let (runs, exact_time) = exact_runs();
    let t0 = Instant::now();
    let cfg3 = sweep_config(3);
    let s3 = run_grid(&cfg3, &experiments::sweep_cells(&cfg3));
    let cfg4 = sweep_config(4);
    let s4 = run_grid(&cfg4, &experiments::sweep_cells(&cfg4));
    let sweep_time = t0.elapsed();

    let results = [
        criterion1(&runs, exact_time),
        criterion2(&runs),
        criterion3(),
        criterion4(&s3, &s4, sweep_time),
        criterion5(&s4),
        criterion6(&s3),
        criterion7(),
        criterion8(),
        criterion9(&s3),
    ];
    let mut failed = 0;
    for (i, r) in results.iter().enumerate() {
        println!(
            "criterion {}: {} ({})",
            i + 1,
            if r.pass { "PASS" } else { "FAIL" },
            r.detail
        );
        if !r.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
