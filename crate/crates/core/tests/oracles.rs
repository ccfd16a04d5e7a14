//! The brute-force direction search against the eigen solution.

use modswap::cca::{CcaModel, CcaOptions, CrossMap};
use modswap::synth::{brute_force_cca_2d, gen_correlated_pairs, SynthSpec};
use modswap::Error;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn exact(d: usize) -> CcaOptions {
    CcaOptions { d, lambda: 0.0, cross_map: CrossMap::Identity }
}

#[test]
fn independent_sides_agree_with_fit() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let t = DMatrix::from_fn(10_000, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let i = DMatrix::from_fn(10_000, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (grid, _, _) = brute_force_cca_2d(&t, &i, 0.5).unwrap();
    let fit = CcaModel::fit_raw(&t, &i, &exact(1)).unwrap().rho[0];
    assert!(grid < 0.05);
    assert!((fit - grid).abs() <= 1e-3, "{fit} vs {grid}");
    assert!(fit >= grid - 1e-3);
}

#[test]
fn single_latent_matches_analytic_correlation() {
    for sigma2 in [0.25, 1.0, 3.0] {
        let rho = 1.0 / (1.0 + sigma2);
        let spec = SynthSpec {
            n_pairs: 5000,
            latent_dim: 1,
            target_rhos: vec![rho],
            text_dim: 2,
            image_dim: 2,
            seed: 12,
            ..SynthSpec::default()
        };
        let p = gen_correlated_pairs(&spec).unwrap();
        let (grid, at, ai) = brute_force_cca_2d(&p.text, &p.image, 0.5).unwrap();
        assert!((grid - rho).abs() <= 0.02, "{grid} vs {rho}");
        // the latent lives in the first column of each side
        assert!(!(10.0..=170.0).contains(&at), "{at}");
        assert!(!(10.0..=170.0).contains(&ai), "{ai}");
        let fit = CcaModel::fit_raw(&p.text, &p.image, &exact(2)).unwrap();
        assert!((fit.rho[0] - grid).abs() <= 1e-3);
    }
}

#[test]
fn oracle_rejects_bad_shapes() {
    let a = DMatrix::<f64>::zeros(1, 2);
    assert!(matches!(brute_force_cca_2d(&a, &a, 0.5), Err(Error::TooFewRows { .. })));
    let b = DMatrix::<f64>::zeros(5, 3);
    assert!(brute_force_cca_2d(&b, &b, 0.5).is_err());
}
