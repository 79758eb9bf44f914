use datasync::linalg::{self, RANK_TOL};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reproduces_rank_deficient_products(seed in 0u64..1_000_000, rows in 1usize..=8, cols in 1usize..=8, inner in 1usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let left = DMatrix::from_fn(rows, inner, |_, _| rng.random_range(-2.0..=2.0));
        let right = DMatrix::from_fn(inner, cols, |_, _| rng.random_range(-2.0..=2.0));
        let m = left * right;
        let svd = linalg::svd(&m);
        let (u, vt) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
        let rebuilt = u * DMatrix::from_diagonal(&svd.singular_values) * vt;
        prop_assert!((&rebuilt - &m).norm() <= 1e-10 * (1.0 + m.norm()));
        prop_assert_eq!(linalg::rank(&m, RANK_TOL), inner.min(rows).min(cols));
    }
}
