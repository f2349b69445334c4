//! Error on B when only the first k variables of the causal order are
//! intervened on.

use semica::experiments::{ablate_interventions, median, ExperimentConfig};

fn main() -> semica::Result<()> {
    let cfg = ExperimentConfig {
        n: 4,
        m: 4,
        n_grid: vec![50_000],
        restarts: 10,
        jobs: 4,
        ..Default::default()
    };
    let rows = ablate_interventions(&cfg)?;
    for k in 1..=cfg.n {
        let med = median(rows.iter().filter(|r| r.targets == k).map(|r| r.mse_b));
        println!("{k} interventions: median mse_B {med:.2e}");
    }
    Ok(())
}
