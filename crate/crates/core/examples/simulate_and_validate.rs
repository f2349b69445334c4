//! Draws a random model, checks it, and simulates one observational and one
//! interventional dataset.

use semica::model::{DEFAULT_FAITHFULNESS_MIN, DEFAULT_RANK_TOL};
use semica::simulator::{
    default_intervention, random_model, sample_interventional, sample_observational,
    RandomModelSpec,
};

fn main() -> semica::Result<()> {
    let model = random_model(&RandomModelSpec::new(4, 3), 11)?;
    println!(
        "{}",
        model.validate(DEFAULT_RANK_TOL, DEFAULT_FAITHFULNESS_MIN)
    );
    println!("B =\n{:.3}", model.b);
    println!("C = (I - B)^-1 A =\n{:.3}", model.reduced_mixing()?);

    let obs = sample_observational(&model, 20_000, 1)?;
    let iv = default_intervention(&model, 1, 10.0)?;
    let intv = sample_interventional(&model, iv, 20_000, 2)?;
    println!("observational means  {:.3?}", obs.column_means());
    println!(
        "do(X_1 = {:.2}) means {:.3?}",
        iv.value,
        intv.column_means()
    );
    Ok(())
}
