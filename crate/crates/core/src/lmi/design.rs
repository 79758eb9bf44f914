//! Gain synthesis from recorded data.
//!
//! All three programs search for a matrix `Λ` of data coefficients. Its
//! columns generate closed-loop trajectories: `H_T(x(0)) Λ` plays the role
//! of a Lyapunov matrix and `H_T(x'(0)) Λ` of its closed-loop image, so the
//! gain never requires the plant matrices.

use nalgebra::DMatrix;

use super::problem::{AffineExpr, FeasibilityProblem, Sense, SolverOptions};
use crate::datarep::{build_error_data, stacked_rank_check, AgentData};
use crate::error::{Error, Result};
use crate::linalg;
use crate::topology::Topology;

/// Largest condition number accepted when inverting a certificate block.
pub const MAX_CONDITION: f64 = 1e12;

/// Default guaranteed decay rate of the designed loops (1/s).
pub const DEFAULT_DECAY_RATE: f64 = 0.5;

/// Solver settings plus the decay rate `a` imposed through
/// `Ẋ Λ + Λᵀ Ẋᵀ + 2a X Λ ≺ 0`. With `a = 0` the programs reduce to the plain
/// Lyapunov conditions; any `a > 0` only shrinks their feasible set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    pub solver: SolverOptions,
    pub decay_rate: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            decay_rate: DEFAULT_DECAY_RATE,
        }
    }
}

/// Single-agent stabilizer `K` such that `A - B K` is Hurwitz.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizerDesign {
    pub gain: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    /// `H_T(x(0)) Λ`.
    pub lyapunov: DMatrix<f64>,
    pub margin: f64,
    pub condition: f64,
}

/// Centralized gain `u = -K δ` for the stacked synchronization error.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalDesign {
    pub gain: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    /// `(L_g ⊗ H_T(x(0))) Λ`.
    pub lyapunov: DMatrix<f64>,
    pub margin: f64,
    pub condition: f64,
}

/// Feasible point of the block-diagonal program.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncCertificate {
    pub lambda: DMatrix<f64>,
    pub p_blocks: Vec<DMatrix<f64>>,
    pub f_blocks: Vec<DMatrix<f64>>,
    pub margin: f64,
    pub equality_residual: f64,
}

impl SyncCertificate {
    /// `K_i = -F_i P_i⁻¹`, so that `u_i = -K_i δ_i` realizes `u = Du Λ (Dx Λ)⁻¹ δ`.
    pub fn gains(&self) -> Result<(Vec<DMatrix<f64>>, f64)> {
        let mut worst: f64 = 1.0;
        let gains = self
            .p_blocks
            .iter()
            .zip(&self.f_blocks)
            .map(|(p, f)| {
                let (inv, cond) = linalg::inverse_checked(p, MAX_CONDITION)?;
                worst = worst.max(cond);
                Ok(-(f * inv))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((gains, worst))
    }

    /// `blkdiag{P_i}`.
    pub fn lyapunov(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.p_blocks)
    }
}

/// Per-agent gains obtained from a [`SyncCertificate`].
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedDesign {
    pub certificate: SyncCertificate,
    pub gains: Vec<DMatrix<f64>>,
    pub condition: f64,
}

impl DistributedDesign {
    /// `blkdiag{K_i}`.
    pub fn global_gain(&self) -> DMatrix<f64> {
        linalg::block_diag(&self.gains)
    }
}

fn require_excitation(data: &AgentData) -> Result<()> {
    if !data.pe_rank_check() {
        return Err(Error::NotExciting(format!(
            "[H_T(u); H_T(x(t))] does not reach rank m + n = {}",
            data.m() + data.n()
        )));
    }
    Ok(())
}

fn require_network(data: &AgentData, top: &Topology) -> Result<()> {
    if !top.check_spanning_tree_with_leader().leader_reaches_all {
        return Err(Error::Topology(
            "the leader does not reach every agent".into(),
        ));
    }
    if !stacked_rank_check(data, top) {
        return Err(Error::NotExciting(
            "[I ⊗ H_T(u); L_g ⊗ H_T(x(0))] does not have full row rank".into(),
        ));
    }
    Ok(())
}

/// Adds `X Λ ≻ 0` and `Ẋ Λ + Λᵀ Ẋᵀ + a (X Λ + Λᵀ Xᵀ) ≺ 0`, returning the
/// handle of `Λ`.
fn lyapunov_pair(
    prob: &mut FeasibilityProblem,
    x: &DMatrix<f64>,
    xdot: &DMatrix<f64>,
    impose_positive: bool,
    rate: f64,
) -> Result<super::VarId> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "decay rate must be finite and >= 0, got {rate}"
        )));
    }
    let cols = x.nrows();
    let lambda = prob.add_var(x.ncols(), cols);
    let eye = DMatrix::identity(cols, cols);
    if impose_positive {
        prob.add_lmi(
            AffineExpr::zeros(cols, cols).term(x.clone(), lambda, eye.clone()),
            Sense::PositiveDefinite,
        )?;
    }
    let shifted = xdot + x * rate;
    prob.add_lmi(
        AffineExpr::zeros(cols, cols)
            .term(shifted.clone(), lambda, eye.clone())
            .term_t(eye, lambda, shifted.transpose()),
        Sense::NegativeDefinite,
    )?;
    Ok(lambda)
}

/// Finds `Λ` with `H_T(x(0)) Λ ≻ 0`, `H_T(x'(0)) Λ + Λᵀ H_T(x'(0))ᵀ ≺ 0` and
/// returns `K = -H_T(u) Λ (H_T(x(0)) Λ)⁻¹`.
pub fn design_single_stabilizer(
    data: &AgentData,
    opts: &DesignOptions,
) -> Result<StabilizerDesign> {
    require_excitation(data)?;
    let mut prob = FeasibilityProblem::new();
    let lambda = lyapunov_pair(&mut prob, data.hx0(), data.hdx0(), true, opts.decay_rate)?;
    let sol = prob.solve(&opts.solver)?.into_assignment()?;
    let lambda = sol.value(lambda).clone();
    let lyapunov = linalg::symmetrize(&(data.hx0() * &lambda));
    let (inv, condition) = linalg::inverse_checked(&lyapunov, MAX_CONDITION)?;
    Ok(StabilizerDesign {
        gain: -(data.hu() * &lambda * inv),
        lambda,
        lyapunov,
        margin: sol.margin,
        condition,
    })
}

/// Centralized program on the synchronization-error data
/// (`Dx Λ ≻ 0`, `Ddx Λ + Λᵀ Ddxᵀ ≺ 0`, `U0 Λ = 0`), `K = -(Du Λ)(Dx Λ)⁻¹`.
pub fn design_global_sync(
    data: &AgentData,
    top: &Topology,
    opts: &DesignOptions,
) -> Result<GlobalDesign> {
    require_network(data, top)?;
    let err = build_error_data(data, top);
    let mut prob = FeasibilityProblem::new();
    let lambda = lyapunov_pair(&mut prob, &err.dx, &err.ddx, true, opts.decay_rate)?;
    let cols = err.dx.nrows();
    prob.add_equality(AffineExpr::zeros(err.u0.nrows(), cols).term(
        err.u0.clone(),
        lambda,
        DMatrix::identity(cols, cols),
    ))?;
    let sol = prob.solve(&opts.solver)?.into_assignment()?;
    let lambda = sol.value(lambda).clone();
    let lyapunov = linalg::symmetrize(&(&err.dx * &lambda));
    let (inv, condition) = linalg::inverse_checked(&lyapunov, MAX_CONDITION)?;
    Ok(GlobalDesign {
        gain: -(&err.du * &lambda * inv),
        lambda,
        lyapunov,
        margin: sol.margin,
        condition,
    })
}

fn selector(blocks: usize, size: usize, i: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(blocks * size, size);
    e.view_mut((i * size, 0), (size, size)).fill_with_identity();
    e
}

/// Block-diagonal program: `Dx Λ = blkdiag{P_i}`, `P_i ≻ 0`,
/// `Ddx Λ + Λᵀ Ddxᵀ ≺ 0`, `U0 Λ = 0`, `Du Λ = blkdiag{F_i}`.
pub fn design_distributed_sync(
    data: &AgentData,
    top: &Topology,
    opts: &DesignOptions,
) -> Result<DistributedDesign> {
    require_network(data, top)?;
    let certificate = distributed_certificate(data, top, opts)?;
    let (gains, condition) = certificate.gains()?;
    Ok(DistributedDesign {
        certificate,
        gains,
        condition,
    })
}

fn distributed_certificate(
    data: &AgentData,
    top: &Topology,
    opts: &DesignOptions,
) -> Result<SyncCertificate> {
    let (n, m, agents) = (data.n(), data.m(), top.agents());
    let err = build_error_data(data, top);
    let cols = n * agents;
    let eye = DMatrix::identity(cols, cols);

    let mut prob = FeasibilityProblem::new();
    let lambda = lyapunov_pair(&mut prob, &err.dx, &err.ddx, false, opts.decay_rate)?;
    let p_vars: Vec<_> = (0..agents).map(|_| prob.add_sym_var(n)).collect();
    let f_vars: Vec<_> = (0..agents).map(|_| prob.add_var(m, n)).collect();

    let mut state_eq = AffineExpr::zeros(cols, cols).term(err.dx.clone(), lambda, eye.clone());
    let mut input_eq =
        AffineExpr::zeros(m * agents, cols).term(err.du.clone(), lambda, eye.clone());
    for i in 0..agents {
        let en = selector(agents, n, i);
        let em = selector(agents, m, i);
        state_eq = state_eq.term(-&en, p_vars[i], en.transpose());
        input_eq = input_eq.term(-em, f_vars[i], en.transpose());
        prob.add_lmi(prob.var_expr(p_vars[i]), Sense::PositiveDefinite)?;
    }
    prob.add_equality(state_eq)?;
    prob.add_equality(input_eq)?;
    prob.add_equality(AffineExpr::zeros(m, cols).term(err.u0.clone(), lambda, eye))?;

    let sol = prob.solve(&opts.solver)?.into_assignment()?;
    Ok(SyncCertificate {
        lambda: sol.value(lambda).clone(),
        p_blocks: p_vars.iter().map(|v| sol.value(*v).clone()).collect(),
        f_blocks: f_vars.iter().map(|v| sol.value(*v).clone()).collect(),
        margin: sol.margin,
        equality_residual: sol.equality_residual,
    })
}
