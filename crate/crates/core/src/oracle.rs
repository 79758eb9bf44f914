//! Model-based baselines: Riccati gains, diagonal graph scalings and
//! block-diagonal Lyapunov certificates for the synchronization error.
//! They consume the true plant and serve as reference points for the
//! data-driven designs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lmi::{AffineExpr, FeasibilityProblem, Sense, SolverOptions};
use crate::lti::LtiSystem;
use crate::topology::Topology;

/// Relative residual accepted for the Riccati solution.
pub const ARE_TOL: f64 = 1e-8;
/// Largest coupling gain tried by [`model_sync_gain`].
pub const MAX_COUPLING: f64 = 1_048_576.0;
/// Required upper bound on the largest eigenvalue of the Lyapunov matrix.
pub const LYAPUNOV_TOL: f64 = 1e-9;

const SIGN_ITERATIONS: usize = 100;
const POLISH_STEPS: usize = 3;

/// Stabilizing solution of `Q + P A + Aᵀ P - P B R⁻¹ Bᵀ P = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AreSolution {
    pub p: DMatrix<f64>,
    /// `R⁻¹ Bᵀ P`.
    pub gain: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub residual: f64,
}

/// `Q + P A + Aᵀ P - P B R⁻¹ Bᵀ P`.
pub fn are_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let rinv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("R is singular".into()))?;
    Ok(q + p * a + a.transpose() * p - p * b * rinv * b.transpose() * p)
}

/// Matrix sign function by scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = h.nrows() as f64;
    let mut z = h.clone();
    for _ in 0..SIGN_ITERATIONS {
        let zinv = z.clone().try_inverse().ok_or_else(|| {
            Error::Numerical("Hamiltonian has eigenvalues on the imaginary axis".into())
        })?;
        let det = z.determinant().abs();
        let scale = if det.is_finite() && det > 0.0 {
            det.powf(1.0 / dim)
        } else {
            1.0
        };
        let next = (&z / scale + zinv * scale) * 0.5;
        let change = (&next - &z).norm() / next.norm();
        z = next;
        if change < 1e-14 {
            break;
        }
    }
    if !linalg::all_finite(&z) {
        return Err(Error::Numerical("sign iteration diverged".into()));
    }
    Ok(z)
}

/// Solves `Aᵀ X + X A = -Q` through the Kronecker form.
fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(&a.transpose()) + a.transpose().kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let x = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Lyapunov operator is singular".into()))?;
    Ok(linalg::symmetrize(&DMatrix::from_column_slice(
        n,
        n,
        x.as_slice(),
    )))
}

/// Stable invariant subspace of the Hamiltonian `[[A, -B R⁻¹ Bᵀ], [-Q, -Aᵀ]]`
/// followed by a few Newton-Kleinman refinements.
pub fn solve_are(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<AreSolution> {
    let n = a.nrows();
    if !a.is_square()
        || b.nrows() != n
        || q.shape() != (n, n)
        || r.shape() != (b.ncols(), b.ncols())
    {
        return Err(Error::Dimension("inconsistent Riccati data".into()));
    }
    let rinv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("R is singular".into()))?;
    let brb = b * &rinv * b.transpose();
    let mut ham = DMatrix::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(a);
    ham.view_mut((0, n), (n, n)).copy_from(&(-&brb));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-q));
    ham.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let sign = matrix_sign(&ham)?;
    let projector = DMatrix::identity(2 * n, 2 * n) - sign;
    let svd = linalg::svd(&projector);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let basis = DMatrix::from_fn(2 * n, n, |i, j| u[(i, order[j])]);
    let x1 = basis.rows(0, n).into_owned();
    let x2 = basis.rows(n, n).into_owned();
    let (x1inv, _) = linalg::inverse_checked(&x1, 1e12)?;
    let mut p = linalg::symmetrize(&(x2 * x1inv));

    for _ in 0..POLISH_STEPS {
        let k = &rinv * b.transpose() * &p;
        let ak = a - b * &k;
        if linalg::spectral_abscissa(&ak) >= 0.0 {
            break;
        }
        let next = solve_lyapunov(&ak, &(q + k.transpose() * r * &k))?;
        let better =
            are_residual(a, b, q, r, &next)?.norm() <= are_residual(a, b, q, r, &p)?.norm();
        if !better {
            break;
        }
        p = next;
    }

    let residual = are_residual(a, b, q, r, &p)?.norm();
    if residual > ARE_TOL * (1.0 + p.norm()) || linalg::min_sym_eigenvalue(&p) <= 0.0 {
        return Err(Error::Numerical(format!(
            "Riccati residual {residual:.3e} too large"
        )));
    }
    Ok(AreSolution {
        gain: rinv * b.transpose() * &p,
        p,
        q: q.clone(),
        r: r.clone(),
        residual,
    })
}

/// Diagonal `S ≻ 0` (largest entry 1) with `Q̄ = S(L+G) + (L+G)ᵀ S ≻ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalScaling {
    pub s: DVector<f64>,
    pub q_bar: DMatrix<f64>,
    pub min_eigenvalue: f64,
}

pub fn find_diagonal_s(top: &Topology) -> Result<DiagonalScaling> {
    let n = top.agents();
    if n == 0 {
        return Err(Error::Topology("empty graph".into()));
    }
    let lg = top.leader_laplacian();
    let mut prob = FeasibilityProblem::new();
    let vars: Vec<_> = (0..n).map(|_| prob.add_var(1, 1)).collect();
    let mut q_bar = AffineExpr::zeros(n, n);
    for (i, &v) in vars.iter().enumerate() {
        let e = DMatrix::from_fn(n, 1, |r, _| if r == i { 1.0 } else { 0.0 });
        q_bar = q_bar.term(e.clone(), v, e.transpose() * &lg).term(
            lg.transpose() * &e,
            v,
            e.transpose(),
        );
        prob.add_lmi(prob.var_expr(v), Sense::PositiveDefinite)?;
    }
    prob.add_lmi(q_bar, Sense::PositiveDefinite)?;
    let sol = prob.solve(&SolverOptions::default())?.into_assignment()?;
    let s = DVector::from_iterator(n, vars.iter().map(|&v| sol.value(v)[(0, 0)]));
    let s = &s / s.max();
    let sm = DMatrix::from_diagonal(&s);
    let q_bar = &sm * &lg + lg.transpose() * &sm;
    let min_eigenvalue = linalg::min_sym_eigenvalue(&q_bar);
    if min_eigenvalue <= 0.0 || s.min() <= 0.0 {
        return Err(Error::Infeasible {
            margin: min_eigenvalue,
        });
    }
    Ok(DiagonalScaling {
        s,
        q_bar,
        min_eigenvalue,
    })
}

/// Coupling gain `c`, shared gain `K = c K̄` and the certificate
/// `P = blkdiag{s_i P̄}` of the synchronization error.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSyncGain {
    pub coupling: f64,
    pub gain: DMatrix<f64>,
    pub are: AreSolution,
    pub scaling: DiagonalScaling,
    pub certificate: DMatrix<f64>,
    /// Largest eigenvalue of `P A_c + A_cᵀ P`.
    pub lyapunov_max: f64,
}

/// `A_c = I ⊗ A - (L+G) ⊗ (B K)` for the shared gain `K`.
pub fn shared_gain_error_matrix(
    sys: &LtiSystem,
    top: &Topology,
    gain: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = top.agents();
    DMatrix::<f64>::identity(n, n).kronecker(sys.a())
        - top.leader_laplacian().kronecker(&(sys.b() * gain))
}

/// Doubles `c` from 1 until `P A_c + A_cᵀ P ≺ 0`.
pub fn model_sync_gain(
    sys: &LtiSystem,
    top: &Topology,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<ModelSyncGain> {
    let are = solve_are(sys.a(), sys.b(), q, r)?;
    if !top.check_spanning_tree_with_leader().leader_reaches_all {
        return Err(Error::Topology(
            "the leader does not reach every agent".into(),
        ));
    }
    let scaling = find_diagonal_s(top)?;
    let certificate = DMatrix::from_diagonal(&scaling.s).kronecker(&are.p);
    let mut coupling = 1.0;
    while coupling <= MAX_COUPLING {
        let gain = &are.gain * coupling;
        let ac = shared_gain_error_matrix(sys, top, &gain);
        let lyap = &certificate * &ac + ac.transpose() * &certificate;
        let lyapunov_max = linalg::max_sym_eigenvalue(&lyap);
        if lyapunov_max <= -LYAPUNOV_TOL {
            return Ok(ModelSyncGain {
                coupling,
                gain,
                are,
                scaling,
                certificate,
                lyapunov_max,
            });
        }
        coupling *= 2.0;
    }
    Err(Error::Numerical(format!(
        "no coupling gain up to {MAX_COUPLING} certifies the error dynamics"
    )))
}
