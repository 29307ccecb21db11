use nalgebra::DMatrix;
use proptest::prelude::*;

use christoffel_refine::linalg::{framing_constants, SpectralGramian, SpectralOptions};
use christoffel_refine::metrics::suboptimality;

/// PSD matrix `A Aᵀ` of the given rank, built from a flat list of entries.
fn psd(dim: usize, rank: usize, entries: &[f64]) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, rank, |i, j| entries[i * rank + j]);
    &a * a.transpose()
}

fn psd_strategy() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=6)
        .prop_flat_map(|dim| (Just(dim), 1..=dim))
        .prop_flat_map(|(dim, rank)| {
            (Just(dim), Just(rank), prop::collection::vec(-2.0f64..2.0, dim * rank))
        })
        .prop_map(|(dim, rank, entries)| psd(dim, rank, &entries))
}

fn well_conditioned(dim: usize, entries: &[f64]) -> DMatrix<f64> {
    psd(dim, dim, entries) + DMatrix::identity(dim, dim) * 0.5
}

proptest! {
    #[test]
    fn moore_penrose_identities(matrix in psd_strategy()) {
        let g = SpectralGramian::with_options(matrix.clone(), SpectralOptions::default().with_floor(0.0)).unwrap();
        let p = g.pinv();
        let scale = 1.0 + matrix.norm();
        let tol = 1e-8 * scale.powi(2);
        // singular spectra make the pseudo-inverse sensitive; skip ill-conditioned draws
        prop_assume!(g.lambda_min_positive() > 1e-6 * g.lambda_max());
        let tol_inv = tol / g.lambda_min_positive();
        prop_assert!((&matrix * &p * &matrix - &matrix).norm() <= tol);
        prop_assert!((&p * &matrix * &p - &p).norm() <= tol_inv * p.norm());
        prop_assert!((&matrix * &p - (&matrix * &p).transpose()).norm() <= tol_inv);
    }

    #[test]
    fn gamma_is_scale_invariant(
        dim in 1usize..=5,
        h_entries in prop::collection::vec(-2.0f64..2.0, 25),
        g_entries in prop::collection::vec(-2.0f64..2.0, 25),
    ) {
        let h = well_conditioned(dim, &h_entries);
        let g = SpectralGramian::new(well_conditioned(dim, &g_entries)).unwrap();
        let base = suboptimality(&SpectralGramian::new(h.clone()).unwrap(), &g);
        prop_assert!(base >= 1.0 - 1e-12);
        for s in [1e-6, 1.0, 1e6] {
            let scaled = suboptimality(&SpectralGramian::new(&h * s).unwrap(), &g);
            prop_assert!((scaled - base).abs() <= 1e-8 * base, "s = {s}: {scaled} vs {base}");
        }
    }

    #[test]
    fn framing_is_symmetric_in_its_arguments(
        dim in 1usize..=5,
        h_entries in prop::collection::vec(-2.0f64..2.0, 25),
        g_entries in prop::collection::vec(-2.0f64..2.0, 25),
    ) {
        let h = SpectralGramian::new(well_conditioned(dim, &h_entries)).unwrap();
        let g = SpectralGramian::new(well_conditioned(dim, &g_entries)).unwrap();
        let forward = framing_constants(&h, &g).unwrap().gamma;
        let backward = framing_constants(&g, &h).unwrap().gamma;
        prop_assert!((forward - backward).abs() <= 1e-8 * forward);
    }
}

#[test]
fn different_kernels_give_infinite_gamma() {
    let g = SpectralGramian::new(DMatrix::identity(3, 3)).unwrap();
    let h = SpectralGramian::new(DMatrix::from_diagonal(&nalgebra::dvector![1.0, 1.0, 0.0])).unwrap();
    assert_eq!(suboptimality(&h, &g), f64::INFINITY);
}
