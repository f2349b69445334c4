//! Median error on B against the number of samples per dataset.

use semica::experiments::{median, sweep, ExperimentConfig};

fn main() -> semica::Result<()> {
    let cfg = ExperimentConfig {
        restarts: 10,
        jobs: 4,
        ..Default::default()
    };
    let rows = sweep(&cfg)?;
    for &n in &cfg.n_grid {
        let med = median(rows.iter().filter(|r| r.n_samples == n).map(|r| r.mse_b));
        println!("N = {n:>6}: median mse_B {med:.2e}");
    }
    Ok(())
}
