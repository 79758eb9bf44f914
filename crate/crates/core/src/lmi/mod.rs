//! Matrix-inequality programs for data-driven stabilization and distributed
//! synchronization gain synthesis.

mod barrier;
mod design;
mod problem;

pub use design::{
    design_distributed_sync, design_global_sync, design_single_stabilizer, DesignOptions,
    DistributedDesign, GlobalDesign, StabilizerDesign, SyncCertificate, DEFAULT_DECAY_RATE,
    MAX_CONDITION,
};
pub use problem::{
    AffineExpr, Assignment, FeasibilityOutcome, FeasibilityProblem, Sense, SolverOptions, VarId,
};

use nalgebra::DMatrix;

use crate::linalg;

/// Hurwitz threshold on the spectral abscissa.
pub const HURWITZ_TOL: f64 = 1e-9;

/// `(max Re λ < -1e-9, max Re λ)`.
pub fn verify_hurwitz(ac: &DMatrix<f64>) -> (bool, f64) {
    let abscissa = linalg::spectral_abscissa(ac);
    (abscissa < -HURWITZ_TOL, abscissa)
}

/// Convenience wrapper around [`FeasibilityProblem::solve`].
pub fn solve_feasibility(
    problem: &FeasibilityProblem,
    opts: &SolverOptions,
) -> crate::Result<FeasibilityOutcome> {
    problem.solve(opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hurwitz_examples() {
        assert_eq!(
            verify_hurwitz(&DMatrix::from_element(1, 1, -1.0)),
            (true, -1.0)
        );
        let (ok, a) = verify_hurwitz(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert!(!ok && a.abs() < 1e-12);
    }
}
