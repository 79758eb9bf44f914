//! Heterogeneous output synchronization with dynamic controllers.
//!
//! Each follower runs `u_i = -K_i (x_i - Π_i ζ_i) + Γ_i ζ_i`, where `ζ_i`
//! reproduces the leader motion from recorded leader data and is pulled
//! towards its neighbours. `(Π_i, Γ_i)` follow from data-based regulator
//! equations, so neither the followers nor the leader need a model.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datarep::{AgentData, RANK_CHECK_POINTS};
use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};
use crate::lti::{simulate, ConstantInput, LtiSystem, RowData, Trajectory};

/// Relative residual accepted for the data-based regulator equations.
pub const REGULATOR_TOL: f64 = 1e-8;
/// Relative residual accepted when representing `ζ` with leader data.
pub const REPLAY_TOL: f64 = 1e-9;
/// Threshold on `|Re λ|` for leader modes on the imaginary axis.
pub const IMAGINARY_AXIS_TOL: f64 = 1e-9;

const MAX_REDRAWS: usize = 16;

/// Recorded state and output of the autonomous leader.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderData {
    pub hx: RowData,
    pub hdx: RowData,
    pub hy: RowData,
    pub period: f64,
    pub holds: usize,
}

impl LeaderData {
    pub fn from_trajectory(traj: &Trajectory, period: f64, holds: usize) -> Result<Self> {
        let set = crate::lti::DataMatrixSet::from_trajectory(traj, period, holds)?;
        Ok(Self {
            hx: set.hx,
            hdx: set.hdx,
            hy: set.hy,
            period,
            holds,
        })
    }

    /// Runs [`LeaderData::record`] and keeps the data matrices.
    pub fn collect(
        leader: &LtiSystem,
        period: f64,
        holds: usize,
        h: f64,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self::record(leader, period, holds, h, seed)?.1)
    }

    /// Records `holds` periods from an initial state uniform on `[-1, 1]^n0`,
    /// redrawing it while the rank condition fails.
    pub fn record(
        leader: &LtiSystem,
        period: f64,
        holds: usize,
        h: f64,
        seed: u64,
    ) -> Result<(Trajectory, Self)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = ConstantInput::zeros(leader.m());
        for _ in 0..MAX_REDRAWS {
            let x0 = DVector::from_fn(leader.n(), |_, _| rng.random_range(-1.0..=1.0));
            let traj = simulate(leader, &x0, &input, period * holds as f64, h)?;
            let data = Self::from_trajectory(&traj, period, holds)?;
            if data.rank_check() {
                return Ok((traj, data));
            }
        }
        Err(Error::NotExciting(format!(
            "leader data never reached rank n0 = {} after {MAX_REDRAWS} draws",
            leader.n()
        )))
    }

    /// Default number of leader holds, `n0 + 2`.
    pub fn default_holds(n0: usize) -> usize {
        n0 + 2
    }

    pub fn n(&self) -> usize {
        self.hx.at_zero().nrows()
    }

    pub fn hx0(&self) -> &DMatrix<f64> {
        self.hx.at_zero()
    }

    pub fn hdx0(&self) -> &DMatrix<f64> {
        self.hdx.at_zero()
    }

    pub fn hy0(&self) -> &DMatrix<f64> {
        self.hy.at_zero()
    }

    /// `rank H_T(x0(t)) = n0` at ten equispaced grid times in `[0, T)`.
    pub fn rank_check(&self) -> bool {
        let n0 = self.n();
        self.hx
            .check_indices(RANK_CHECK_POINTS)
            .into_iter()
            .all(|s| linalg::rank(self.hx.at(s), RANK_TOL) == n0)
    }

    /// Minimum-norm `ᾱ` with `H_T(x0(0)) ᾱ = ζ`.
    pub fn replay(&self, zeta: &DVector<f64>) -> Result<DVector<f64>> {
        if zeta.len() != self.n() {
            return Err(Error::Dimension(format!(
                "ζ has length {}, expected {}",
                zeta.len(),
                self.n()
            )));
        }
        if linalg::rank(self.hx0(), RANK_TOL) < self.n() {
            return Err(Error::NotExciting("H_T(x0(0)) is rank deficient".into()));
        }
        let alpha = linalg::min_norm_solve_vec(self.hx0(), zeta, RANK_TOL);
        let residual = (self.hx0() * &alpha - zeta).norm();
        let tolerance = REPLAY_TOL * (1.0 + zeta.norm());
        if residual > tolerance {
            return Err(Error::Representation {
                residual,
                tolerance,
            });
        }
        Ok(alpha)
    }
}

/// Data coefficients `S_i` and the regulator pair they encode.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulatorSolution {
    pub s: DMatrix<f64>,
    pub pi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    /// Relative residuals of the state and output data equations.
    pub residuals: (f64, f64),
}

/// Solves `H_T(x_i'(0)) S H_T(x0(0)) = H_T(x_i(0)) S H_T(x0'(0))` and
/// `H_T(y_i(0)) S H_T(x0(0)) = H_T(y0(0))` jointly in the minimum-norm sense,
/// then `Γ = H_T(u_i) S`, `Π = H_T(x_i(0)) S`.
pub fn solve_regulator(data: &AgentData, leader: &LeaderData) -> Result<RegulatorSolution> {
    let (hx0, hdx0, hy0) = (leader.hx0(), leader.hdx0(), leader.hy0());
    if hy0.nrows() != data.p() {
        return Err(Error::Dimension(format!(
            "agent has {} outputs, leader has {}",
            data.p(),
            hy0.nrows()
        )));
    }
    let (mi, n0) = (data.holds(), leader.n());
    let state_op = hx0.transpose().kronecker(data.hdx0()) - hdx0.transpose().kronecker(data.hx0());
    let output_op = hx0.transpose().kronecker(data.hy0());
    let op = linalg::vstack(&[&state_op, &output_op]);
    let mut rhs = DVector::zeros(op.nrows());
    rhs.rows_mut(state_op.nrows(), output_op.nrows())
        .copy_from(&DVector::from_column_slice(hy0.as_slice()));

    let v = linalg::min_norm_solve_vec(&op, &rhs, RANK_TOL);
    let s = DMatrix::from_column_slice(mi, n0, v.as_slice());
    let residual = (&op * &v - &rhs).norm() / hy0.norm().max(f64::MIN_POSITIVE);
    if residual > REGULATOR_TOL {
        return Err(Error::NoRegulatorSolution { residual });
    }
    Ok(RegulatorSolution {
        gamma: data.hu() * &s,
        pi: data.hx0() * &s,
        residuals: regulator_data_residuals(data, leader, &s),
        s,
    })
}

/// Residuals of the state and output data equations for a given `S`,
/// relative to `‖H_T(y0(0))‖`.
pub fn regulator_data_residuals(
    data: &AgentData,
    leader: &LeaderData,
    s: &DMatrix<f64>,
) -> (f64, f64) {
    let (hx0, hdx0, hy0) = (leader.hx0(), leader.hdx0(), leader.hy0());
    let scale = hy0.norm().max(f64::MIN_POSITIVE);
    let state = (data.hdx0() * s * hx0 - data.hx0() * s * hdx0).norm() / scale;
    let output = (data.hy0() * s * hx0 - hy0).norm() / scale;
    (state, output)
}

/// `(‖A Π + B Γ - Π A0‖, ‖C Π - C0‖)` with the true models.
pub fn verify_regulator_model(
    sol: &RegulatorSolution,
    sys: &LtiSystem,
    leader: &LtiSystem,
) -> (f64, f64) {
    regulator_model_residuals(&sol.pi, &sol.gamma, sys, leader)
}

pub fn regulator_model_residuals(
    pi: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    sys: &LtiSystem,
    leader: &LtiSystem,
) -> (f64, f64) {
    let state = sys.a() * pi + sys.b() * gamma - pi * leader.a();
    let output = sys.c() * pi - leader.c();
    (state.norm(), output.norm())
}

/// Every eigenvalue of `A0` satisfies `|Re λ| ≤ 1e-9`.
pub fn check_leader_assumption(a0: &DMatrix<f64>) -> bool {
    linalg::eigenvalues(a0)
        .iter()
        .all(|l| l.re.abs() <= IMAGINARY_AXIS_TOL)
}

/// Local state of one follower's dynamic controller.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicController {
    pub gain: DMatrix<f64>,
    pub pi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    /// `ζ` after the last completed integration step.
    pub zeta: DVector<f64>,
    pub alpha: DVector<f64>,
    pub period_index: usize,
    period: f64,
}

/// Neighbour and leader terms entering `ζ_i'`.
#[derive(Debug, Clone, Copy)]
pub struct Coupling<'a> {
    /// `(a_ij, ζ_j)` for every in-neighbour `j`.
    pub neighbors: &'a [(f64, &'a DVector<f64>)],
    pub pin: f64,
    pub leader_state: &'a DVector<f64>,
}

impl DynamicController {
    pub fn init(
        sol: &RegulatorSolution,
        gain: DMatrix<f64>,
        zeta0: DVector<f64>,
        leader: &LeaderData,
    ) -> Result<Self> {
        Self::new(gain, sol.pi.clone(), sol.gamma.clone(), zeta0, leader)
    }

    /// Controller from stored `Π`, `Γ` and `K`, with `ᾱ` fitted to `ζ(0)`.
    pub fn new(
        gain: DMatrix<f64>,
        pi: DMatrix<f64>,
        gamma: DMatrix<f64>,
        zeta0: DVector<f64>,
        leader: &LeaderData,
    ) -> Result<Self> {
        if gain.shape() != (gamma.nrows(), pi.nrows()) || pi.ncols() != leader.n() {
            return Err(Error::Dimension(format!(
                "gain is {}x{} and Π is {}x{}, expected {}x{} and {}x{}",
                gain.nrows(),
                gain.ncols(),
                pi.nrows(),
                pi.ncols(),
                gamma.nrows(),
                pi.nrows(),
                pi.nrows(),
                leader.n()
            )));
        }
        Ok(Self {
            alpha: leader.replay(&zeta0)?,
            gain,
            pi,
            gamma,
            zeta: zeta0,
            period_index: 0,
            period: leader.period,
        })
    }

    /// Local data time `t - kT`, rejected outside `[0, T]`.
    fn local_time(&self, t: f64) -> Result<f64> {
        let tau = t - self.period_index as f64 * self.period;
        let slack = 1e-9 * self.period;
        if tau < -slack || tau > self.period + slack {
            return Err(Error::Contract(format!(
                "t = {t} lies outside period {} of the controller",
                self.period_index
            )));
        }
        Ok(tau.clamp(0.0, self.period))
    }

    /// `H_T(x0'(t - kT)) ᾱ - Σ a_ij (ζ - ζ_j) - g (ζ - x0)`.
    pub fn zeta_derivative(
        &self,
        leader: &LeaderData,
        t: f64,
        zeta: &DVector<f64>,
        coupling: Coupling<'_>,
    ) -> Result<DVector<f64>> {
        let tau = self.local_time(t)?;
        let mut d = leader.hdx.at_time(tau)? * &self.alpha;
        for (w, zj) in coupling.neighbors {
            d -= (zeta - *zj) * *w;
        }
        if coupling.pin != 0.0 {
            d -= (zeta - coupling.leader_state) * coupling.pin;
        }
        Ok(d)
    }

    /// `H_T(x0(t - kT)) ᾱ`, the leader-like motion generated from data.
    pub fn replayed_state(&self, leader: &LeaderData, t: f64) -> Result<DVector<f64>> {
        Ok(leader.hx.at_time(self.local_time(t)?)? * &self.alpha)
    }

    /// Restarts the data window at `t = (k+1) T` from `ζ((k+1) T)`.
    pub fn on_period_boundary(&mut self, zeta: DVector<f64>, leader: &LeaderData) -> Result<()> {
        self.alpha = leader.replay(&zeta)?;
        self.zeta = zeta;
        self.period_index += 1;
        Ok(())
    }

    /// `-K (x - Π ζ) + Γ ζ` with the stored `ζ`.
    pub fn control_input(&self, x: &DVector<f64>) -> DVector<f64> {
        self.control_at(x, &self.zeta)
    }

    pub fn control_at(&self, x: &DVector<f64>, zeta: &DVector<f64>) -> DVector<f64> {
        -(&self.gain * (x - &self.pi * zeta)) + &self.gamma * zeta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario;

    #[test]
    fn leader_assumption_examples() {
        assert!(check_leader_assumption(scenario::leader().a()));
        assert!(!check_leader_assumption(&DMatrix::from_element(1, 1, -1.0)));
        assert!(check_leader_assumption(&DMatrix::from_row_slice(
            2,
            2,
            &[0.0, 1.0, -1.0, 0.0]
        )));
    }

    #[test]
    fn identical_dynamics_have_trivial_regulator() {
        let leader = scenario::leader();
        let sys = LtiSystem::new(
            leader.a().clone(),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            leader.c().clone(),
        )
        .unwrap();
        let r = regulator_model_residuals(
            &DMatrix::identity(2, 2),
            &DMatrix::zeros(1, 2),
            &sys,
            &leader,
        );
        assert_eq!(r, (0.0, 0.0));
    }

    #[test]
    fn leader_data_replays_states() {
        let data = LeaderData::collect(&scenario::leader(), 0.37, 4, 1e-3, 5).unwrap();
        assert!(data.rank_check());
        let z = data.hx0().column(0).into_owned();
        let a = data.replay(&z).unwrap();
        assert!((data.hx0() * a - z).norm() <= 1e-9);
        assert_eq!(data.replay(&DVector::zeros(2)).unwrap().norm(), 0.0);
    }
}
