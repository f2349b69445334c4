//! Fourth-order cumulants from samples against their population values.

use semica::cumulants::{center, empirical_cumulant4, excess_kurtosis};
use semica::simulator::{random_model, sample_latents, sample_observational, RandomModelSpec};
use semica::tensor::model_cumulant;
use semica::LatentSpec;

fn main() -> semica::Result<()> {
    let h = sample_latents(&LatentSpec::laplace(), 1, 100_000, 3);
    println!(
        "Laplace excess kurtosis: {:.3} (population 3)",
        excess_kurtosis(h.as_slice())?
    );

    let model = random_model(&RandomModelSpec::new(3, 3), 5)?;
    let truth = model_cumulant(&model.reduced_mixing()?, &[model.latent.kappa(); 3])?;
    for n in [1_000, 10_000, 100_000] {
        let data = center(&sample_observational(&model, n, 9)?)?;
        let est = empirical_cumulant4(&data)?;
        let rel = est.distance_sq(&truth)?.sqrt() / truth.frobenius();
        println!("N = {n:>6}: relative error {rel:.4}");
    }
    Ok(())
}
