//! Error on B when the number of latents passed to the pipeline is off by
//! one.

use semica::experiments::{ablate_latents, median, ExperimentConfig};

fn main() -> semica::Result<()> {
    let cfg = ExperimentConfig {
        n: 4,
        m: 3,
        n_grid: vec![50_000],
        restarts: 10,
        jobs: 4,
        ..Default::default()
    };
    let rows = ablate_latents(&cfg)?;
    for k in cfg.default_m_grid() {
        let sel: Vec<_> = rows.iter().filter(|r| r.m_assumed == k).collect();
        let errors = sel.iter().filter(|r| r.is_error()).count();
        println!(
            "m_assumed = {k}: median mse_B {:.2e}, {errors} failed",
            median(sel.iter().map(|r| r.mse_b))
        );
    }
    Ok(())
}
