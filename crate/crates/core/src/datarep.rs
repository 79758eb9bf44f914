//! Data-based representations of agent trajectories and of the
//! synchronization-error dynamics of a homogeneous network.
//!
//! Every trajectory `x̄` of a controllable agent on `[0, T)` is a combination
//! `x̄(t) = H_T(x(t)) α(t)` of recorded columns. Unforced motions keep `α`
//! constant, which is what the simulation shortcut and the error
//! representation below exploit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};
use crate::lti::{generate_pcpe, simulate, DataMatrixSet, LtiSystem, Trajectory};
use crate::topology::Topology;

/// Relative residual accepted when solving for a representation vector.
pub const REPRESENTATION_TOL: f64 = 1e-9;

/// Number of sampled times in `[0, T)` at which rank conditions are checked.
pub const RANK_CHECK_POINTS: usize = 10;

const INITIAL_STATE_STREAM: u64 = 0x5eed_0f1c;

/// Recorded data matrices of one agent together with its dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentData {
    pub set: DataMatrixSet,
    n: usize,
    m: usize,
    p: usize,
}

impl AgentData {
    pub fn new(set: DataMatrixSet) -> Self {
        let (n, m, p) = (
            set.hx.at_zero().nrows(),
            set.hu.nrows(),
            set.hy.at_zero().nrows(),
        );
        Self { set, n, m, p }
    }

    pub fn from_trajectory(traj: &Trajectory, period: f64, holds: usize) -> Result<Self> {
        Ok(Self::new(DataMatrixSet::from_trajectory(
            traj, period, holds,
        )?))
    }

    /// Runs [`record_experiment`] and reads off the data matrices.
    pub fn collect(sys: &LtiSystem, period: f64, holds: usize, h: f64, seed: u64) -> Result<Self> {
        Self::from_trajectory(
            &record_experiment(sys, period, holds, h, seed)?,
            period,
            holds,
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn holds(&self) -> usize {
        self.set.holds
    }

    pub fn period(&self) -> f64 {
        self.set.period
    }

    pub fn hu(&self) -> &DMatrix<f64> {
        &self.set.hu
    }

    pub fn hx0(&self) -> &DMatrix<f64> {
        self.set.hx.at_zero()
    }

    pub fn hdx0(&self) -> &DMatrix<f64> {
        self.set.hdx.at_zero()
    }

    pub fn hy0(&self) -> &DMatrix<f64> {
        self.set.hy.at_zero()
    }

    /// `[H_T(u); H_T(x(t_s))]`.
    pub fn input_state_matrix(&self, s: usize) -> DMatrix<f64> {
        linalg::vstack(&[&self.set.hu, self.set.hx.at(s)])
    }

    /// Rank of `[H_T(u); H_T(x(t))]` equals `m + n` at `t = 0` and nine more
    /// equispaced grid times in `[0, T)`.
    pub fn pe_rank_check(&self) -> bool {
        if self.holds() < self.m + self.n {
            return false;
        }
        self.set
            .hx
            .check_indices(RANK_CHECK_POINTS)
            .into_iter()
            .all(|s| linalg::rank(&self.input_state_matrix(s), RANK_TOL) == self.m + self.n)
    }

    /// Minimum-norm `α0` with `[H_T(u); H_T(x(0))] α0 = [u0; x0]`.
    pub fn represent_initial(&self, u0: &DVector<f64>, x0: &DVector<f64>) -> Result<DVector<f64>> {
        if u0.len() != self.m || x0.len() != self.n {
            return Err(Error::Dimension(format!(
                "expected (u0, x0) of lengths ({}, {}), got ({}, {})",
                self.m,
                self.n,
                u0.len(),
                x0.len()
            )));
        }
        let a = self.input_state_matrix(0);
        let b = DVector::from_iterator(self.m + self.n, u0.iter().chain(x0.iter()).copied());
        solve_representation(&a, &b)
    }

    /// Data-based simulation of the unforced motion from `x0`:
    /// `x̄(t) = H_T(x(t)) α`, `x̄'(t) = H_T(x'(t)) α` on the grid of `[0, T)`.
    pub fn unforced_trajectory(&self, x0: &DVector<f64>) -> Result<UnforcedPath> {
        let alpha = self.represent_initial(&DVector::zeros(self.m), x0)?;
        let s_count = self.set.hx.period_samples();
        let x = (0..s_count).map(|s| self.set.hx.at(s) * &alpha).collect();
        let dx = (0..s_count).map(|s| self.set.hdx.at(s) * &alpha).collect();
        Ok(UnforcedPath {
            alpha,
            step: self.set.hx.step(),
            x,
            dx,
        })
    }
}

/// One PCPE experiment of order `n + 1` from an initial state uniform on
/// `[-1, 1]^n`, both drawn from `seed`.
pub fn record_experiment(
    sys: &LtiSystem,
    period: f64,
    holds: usize,
    h: f64,
    seed: u64,
) -> Result<Trajectory> {
    let input = generate_pcpe(sys.m(), sys.n() + 1, period, holds, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INITIAL_STATE_STREAM);
    let x0 = DVector::from_fn(sys.n(), |_, _| rng.random_range(-1.0..=1.0));
    simulate(sys, &x0, &input, input.duration(), h)
}

/// Solves `a α = b` in the minimum-norm sense and rejects inexact solutions.
pub fn solve_representation(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let alpha = linalg::min_norm_solve_vec(a, b, RANK_TOL);
    let residual = (a * &alpha - b).norm();
    let tolerance = REPRESENTATION_TOL * b.norm();
    if residual > tolerance {
        return Err(Error::Representation {
            residual,
            tolerance,
        });
    }
    Ok(alpha)
}

/// Unforced trajectory generated from data, sampled at `t = s h`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnforcedPath {
    pub alpha: DVector<f64>,
    pub step: f64,
    pub x: Vec<DVector<f64>>,
    pub dx: Vec<DVector<f64>>,
}

/// Data factors of the global synchronization error:
/// `δ = Dx α`, `δ' = Ddx α`, `u = Du α` and the leader constraint `U0 α = 0`,
/// where `α = [α_0; α_1; ...; α_N]` stacks leader and agent coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDataMatrices {
    /// `L_g ⊗ H_T(x(0))`, nN x M(N+1).
    pub dx: DMatrix<f64>,
    /// `L_g ⊗ H_T(x'(0))`, nN x M(N+1).
    pub ddx: DMatrix<f64>,
    /// `I_g ⊗ H_T(u)`, mN x M(N+1).
    pub du: DMatrix<f64>,
    /// `[H_T(u) 0]`, m x M(N+1).
    pub u0: DMatrix<f64>,
}

pub fn build_error_data(data: &AgentData, top: &Topology) -> ErrorDataMatrices {
    let lg = top.extended_laplacian();
    let ig = top.agent_selector();
    let n_agents = top.agents();
    let holds = data.holds();
    let mut u0 = DMatrix::zeros(data.m(), holds * (n_agents + 1));
    u0.view_mut((0, 0), (data.m(), holds)).copy_from(data.hu());
    ErrorDataMatrices {
        dx: lg.kronecker(data.hx0()),
        ddx: lg.kronecker(data.hdx0()),
        du: ig.kronecker(data.hu()),
        u0,
    }
}

/// `[I_{N+1} ⊗ H_T(u); L_g ⊗ H_T(x(0))]`.
pub fn stacked_matrix(data: &AgentData, top: &Topology) -> DMatrix<f64> {
    let eye = DMatrix::<f64>::identity(top.agents() + 1, top.agents() + 1);
    linalg::vstack(&[
        &eye.kronecker(data.hu()),
        &top.extended_laplacian().kronecker(data.hx0()),
    ])
}

/// Full row rank `m(N+1) + nN` of [`stacked_matrix`].
pub fn stacked_rank_check(data: &AgentData, top: &Topology) -> bool {
    let target = data.m() * (top.agents() + 1) + data.n() * top.agents();
    let h = stacked_matrix(data, top);
    h.ncols() >= target && linalg::rank(&h, RANK_TOL) == target
}
