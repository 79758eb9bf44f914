use datasync::linalg;
use datasync::lmi::verify_hurwitz;
use datasync::lti::LtiSystem;
use datasync::oracle::{
    are_residual, model_sync_gain, shared_gain_error_matrix, solve_are, LYAPUNOV_TOL,
};
use datasync::scenario::{is_controllable, random_rooted_graph};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Controllable pair with entries uniform on `[-2, 2]`, unstable modes allowed.
fn random_pair(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LtiSystem {
    loop {
        let sys = LtiSystem::new(
            DMatrix::from_fn(n, n, |_, _| rng.random_range(-2.0..=2.0)),
            DMatrix::from_fn(n, m, |_, _| rng.random_range(-2.0..=2.0)),
            DMatrix::identity(n, n),
        )
        .unwrap();
        if is_controllable(&sys) {
            return sys;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn riccati_solutions_are_stabilizing(seed in 0u64..1_000_000, n in 1usize..=4, m in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = random_pair(&mut rng, n, m);
        let q = DMatrix::identity(n, n);
        let r = DMatrix::identity(m, m);
        let sol = solve_are(sys.a(), sys.b(), &q, &r).unwrap();
        let residual = are_residual(sys.a(), sys.b(), &q, &r, &sol.p).unwrap().norm();
        prop_assert!(residual <= 1e-8 * (1.0 + sol.p.norm()), "residual {residual:e}");
        prop_assert!((&sol.p - sol.p.transpose()).amax() <= 1e-12 * (1.0 + sol.p.amax()));
        prop_assert!(linalg::min_sym_eigenvalue(&sol.p) > 0.0);
        prop_assert!((&sol.gain - sys.b().transpose() * &sol.p).amax() <= 1e-10 * (1.0 + sol.gain.amax()));
        prop_assert!(verify_hurwitz(&(sys.a() - sys.b() * &sol.gain)).0);
    }

    #[test]
    fn model_gain_has_a_block_diagonal_certificate(seed in 0u64..1_000_000, n in 1usize..=4, agents in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..=2);
        let sys = random_pair(&mut rng, n, m);
        let top = random_rooted_graph(&mut rng, agents);
        let g = model_sync_gain(&sys, &top, &DMatrix::identity(n, n), &DMatrix::identity(m, m)).unwrap();
        let p = &g.certificate;
        for i in 0..agents {
            for j in 0..agents {
                if i != j {
                    prop_assert!(p.view((i * n, j * n), (n, n)).amax() == 0.0);
                }
            }
        }
        prop_assert!(linalg::min_sym_eigenvalue(p) > 0.0);
        let ac = shared_gain_error_matrix(&sys, &top, &g.gain);
        let lyap_max = linalg::max_sym_eigenvalue(&(p * &ac + ac.transpose() * p));
        prop_assert!(lyap_max <= -LYAPUNOV_TOL, "max eig {lyap_max:e}");
        prop_assert!(verify_hurwitz(&ac).0);
    }
}

#[test]
fn riccati_solution_matches_reference_values() {
    let a = DMatrix::from_column_slice(
        3,
        3,
        &[
            0.11847165217821765,
            0.9701146223587949,
            -0.7584159205316774,
            0.2786859834773123,
            0.8414769440387397,
            -0.9296365344593571,
            0.3412318229608271,
            0.8643416795841952,
            0.35765872114502706,
        ],
    );
    let b = DMatrix::from_column_slice(
        3,
        2,
        &[
            -0.8539219029084002,
            0.180701569741339,
            0.9097718244493462,
            0.5201976667327064,
            -0.8923978846524792,
            0.42824054594188254,
        ],
    );
    let expected = DMatrix::from_row_slice(
        3,
        3,
        &[
            6.778231234147673,
            6.017011725377367,
            6.917465242076208,
            6.017011725377367,
            6.763350705215543,
            6.433397286818657,
            6.917465242076208,
            6.433397286818657,
            10.051277773744436,
        ],
    );
    let sol = solve_are(&a, &b, &DMatrix::identity(3, 3), &DMatrix::identity(2, 2)).unwrap();
    assert!((&sol.p - expected).amax() <= 1e-9, "P = {}", sol.p);
}
