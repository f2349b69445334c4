//! Symmetric CP decomposition of an exact orthogonal tensor, then ICA on
//! samples of a two-variable model.

use nalgebra::DMatrix;
use semica::cumulants::CumulantTensor4;
use semica::simulator::sample_observational;
use semica::tensor::{decompose_symmetric4, recover_ica_mixing, DecomposeOptions, IcaOptions};
use semica::{LatentSpec, SemIcaModel};

fn main() -> semica::Result<()> {
    let (c, s) = (0.6f64, 0.8f64);
    let v = DMatrix::from_row_slice(3, 2, &[c, -s, s, c, 0.0, 0.0]);
    let t = CumulantTensor4::from_components(&v, &[3.0, -1.2])?;
    let cp = decompose_symmetric4(&t, 2, &DecomposeOptions::default(), 0)?;
    println!("weights {:.6?}, residual {:.1e}", cp.weights, cp.residual);
    println!("columns\n{:.6}", cp.columns);

    let model = SemIcaModel::new(
        DMatrix::identity(2, 2),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.0]),
        0.0,
        LatentSpec::laplace(),
    )?;
    let data = sample_observational(&model, 100_000, 7)?;
    let est = recover_ica_mixing(&data, 2, &IcaOptions::default(), 0)?;
    println!("true C\n{:.3}", model.reduced_mixing()?);
    println!(
        "estimated mixing (columns up to order, sign and scale)\n{:.3}",
        est.mixing()
    );
    Ok(())
}
