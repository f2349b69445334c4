mod common;

use proptest::prelude::*;
use semica::cumulants::{center, empirical_covariance};
use semica::simulator::{
    default_intervention, random_model, sample_interventional, sample_observational,
    RandomModelSpec,
};
use semica::Intervention;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn clamped_column_is_bitwise_constant(seed in any::<u64>(), n in 1usize..=5, noise in 0.0f64..0.5, lambda in -20.0f64..20.0) {
        let spec = RandomModelSpec { noise_std: noise, ..RandomModelSpec::new(n, n) };
        let model = random_model(&spec, seed).unwrap();
        for t in 0..n {
            let d = sample_interventional(&model, Intervention { target: t, value: lambda }, 50, seed).unwrap();
            prop_assert!(d.samples.column(t).iter().all(|&x| x.to_bits() == lambda.to_bits()));
        }
    }

    #[test]
    fn noiseless_rows_lie_in_mixing_span(seed in any::<u64>(), n in 2usize..=5, m_off in 0usize..2) {
        let m = n.saturating_sub(m_off).max(1);
        let model = random_model(&RandomModelSpec::new(n, m), seed).unwrap();
        let c = model.reduced_mixing().unwrap();
        let x = sample_observational(&model, 40, seed).unwrap().samples.transpose();
        // least-squares fit of every sample by the columns of C
        let coef = (c.transpose() * &c).cholesky().unwrap().solve(&(c.transpose() * &x));
        let resid = &x - &c * coef;
        prop_assert!(resid.amax() < 1e-10 * x.amax().max(1.0));
    }

    #[test]
    fn sampling_is_a_function_of_the_seed(seed in any::<u64>()) {
        let model = random_model(&RandomModelSpec { noise_std: 0.1, ..RandomModelSpec::new(3, 2) }, seed).unwrap();
        let a = sample_observational(&model, 30, seed).unwrap();
        let b = sample_observational(&model, 30, seed).unwrap();
        prop_assert_eq!(a.samples, b.samples);
        let iv = default_intervention(&model, 1, 10.0).unwrap();
        let a = sample_interventional(&model, iv, 30, seed).unwrap();
        let b = sample_interventional(&model, iv, 30, seed).unwrap();
        prop_assert_eq!(a.samples, b.samples);
    }
}

#[test]
fn covariance_converges_to_population() {
    let n_samples = 100_000;
    let (n, m) = (3, 3);
    let bound = 5.0 * (m * n) as f64 / (n_samples as f64).sqrt();
    let mut failures = 0;
    for seed in 0..10 {
        let model = random_model(&RandomModelSpec::new(n, m), seed).unwrap();
        let c = model.reduced_mixing().unwrap();
        let data = center(&sample_observational(&model, n_samples, seed + 100).unwrap()).unwrap();
        let err = (empirical_covariance(&data).unwrap() - &c * c.transpose()).norm();
        if err >= bound {
            failures += 1;
        }
    }
    assert!(failures <= 1, "{failures} seeds outside {bound}");
}

#[test]
fn m_star_interventional_rows() {
    let model = common::m_star(0.0);
    let d = sample_interventional(
        &model,
        Intervention {
            target: 1,
            value: 0.0,
        },
        1000,
        3,
    )
    .unwrap();
    let h = semica::simulator::sample_latents(&model.latent, 2, 1000, 3);
    for r in 0..1000 {
        assert_eq!(d.samples[(r, 1)], 0.0);
        assert!((d.samples[(r, 0)] - h[(r, 0)]).abs() < 1e-12);
    }
}
