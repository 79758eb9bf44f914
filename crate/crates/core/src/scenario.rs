//! Reference network: a double-integrator leader followed by four
//! third-order vehicles over a four-node directed graph.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg::{self, RANK_TOL};
use crate::lti::LtiSystem;
use crate::topology::Topology;

/// `{a, b, c, d}` of each follower.
pub const FOLLOWER_CONSTANTS: [[f64; 4]; 4] = [
    [1.0, 0.0, 1.0, 1.0],
    [1.0, 0.0, 10.0, 2.0],
    [1.0, 10.0, 2.0, 1.0],
    [1.0, 1.0, 2.0, 1.0],
];

/// Graph lines: `1 -> 2`, `1 -> 3`, `2 -> 3`, `3 -> 4`, leader pinned to agent 1.
pub const GRAPH_TEXT: &str = "1 -> 2 : 1\n1 -> 3 : 1\n2 -> 3 : 1\n3 -> 4 : 1\npin 1 : 1\n";

/// Autonomous leader `x0' = [[0, 1], [0, 0]] x0`, `y0 = [1, 0] x0`.
pub fn leader() -> LtiSystem {
    LtiSystem::autonomous(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
    )
    .expect("consistent leader dimensions")
}

/// `A = [[0, 1, 0], [0, 0, a], [0, -b, -c]]`, `B = [0, 0, d]ᵀ`, `C = [1, 0, 0]`.
pub fn vehicle(a: f64, b: f64, c: f64, d: f64) -> LtiSystem {
    LtiSystem::new(
        DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, a, 0.0, -b, -c]),
        DMatrix::from_row_slice(3, 1, &[0.0, 0.0, d]),
        DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
    )
    .expect("consistent vehicle dimensions")
}

pub fn followers() -> Vec<LtiSystem> {
    FOLLOWER_CONSTANTS
        .iter()
        .map(|k| vehicle(k[0], k[1], k[2], k[3]))
        .collect()
}

pub fn graph() -> Topology {
    Topology::parse(4, GRAPH_TEXT).expect("valid reference graph")
}

/// `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_matrix(sys: &LtiSystem) -> DMatrix<f64> {
    let mut blocks = vec![sys.b().clone()];
    for _ in 1..sys.n() {
        let next = sys.a() * blocks.last().expect("nonempty");
        blocks.push(next);
    }
    linalg::hstack(&blocks.iter().collect::<Vec<_>>())
}

pub fn is_controllable(sys: &LtiSystem) -> bool {
    linalg::rank(&controllability_matrix(sys), RANK_TOL) == sys.n()
}

/// Controllable `(A, B)` with entries uniform on `[-1, 1]` and `C = I`,
/// shifted to `A - max(0, abscissa(A)) I` so that the free response stays
/// bounded.
pub fn random_system<R: Rng>(rng: &mut R, n: usize, m: usize) -> LtiSystem {
    loop {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
        let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..=1.0));
        let shift = linalg::spectral_abscissa(&a).max(0.0);
        let a = a - DMatrix::identity(n, n) * shift;
        let sys = LtiSystem::new(a, b, DMatrix::identity(n, n)).expect("consistent dimensions");
        if is_controllable(&sys) {
            return sys;
        }
    }
}

/// `n` agents on a random tree rooted at agent 1 (the only pinned agent)
/// plus extra edges with probability 0.3; weights uniform on `[0.1, 3]`.
pub fn random_rooted_graph<R: Rng>(rng: &mut R, n: usize) -> Topology {
    let mut a = DMatrix::zeros(n, n);
    for i in 1..n {
        let parent = rng.random_range(0..i);
        a[(i, parent)] = rng.random_range(0.1..=3.0);
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)] == 0.0 && rng.random_bool(0.3) {
                a[(i, j)] = rng.random_range(0.1..=3.0);
            }
        }
    }
    let mut g = DVector::zeros(n);
    if n > 0 {
        g[0] = rng.random_range(0.1..=3.0);
    }
    Topology::new(a, g).expect("valid random graph")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_network_shapes() {
        let f = followers();
        assert_eq!(f.len(), 4);
        assert_eq!(f[2].a()[(2, 1)], -10.0);
        assert_eq!(f[1].b()[(2, 0)], 2.0);
        assert_eq!(leader().m(), 0);
        assert_eq!(graph().pinning().as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn random_instances_meet_their_contracts() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for n in 1..=4 {
            let sys = random_system(&mut rng, n, 1);
            assert!(is_controllable(&sys));
            assert!(linalg::spectral_abscissa(sys.a()) <= 1e-12);
            let top = random_rooted_graph(&mut rng, n + 1);
            assert!(top.check_spanning_tree_with_leader().leader_reaches_all);
        }
        assert!(!is_controllable(&vehicle(1.0, 0.0, 1.0, 0.0)));
    }
}
