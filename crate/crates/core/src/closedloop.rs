//! Closed-loop network simulation.
//!
//! Plants, leader and controller states are stacked into one ODE and
//! advanced with a single fixed-step RK4 integrator.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hetero::{Coupling, DynamicController, LeaderData};
use crate::linalg;
use crate::lti::{fmt_num, grid_steps, LtiSystem};
use crate::topology::Topology;

/// Settling band as a fraction of the initial error norm.
pub const SETTLING_FRACTION: f64 = 0.01;
/// Default horizon of homogeneous runs (s).
pub const HOMOGENEOUS_DURATION: f64 = 50.0;
/// Default horizon of heterogeneous runs (s).
pub const HETEROGENEOUS_DURATION: f64 = 30.0;

/// Summary of an error norm series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub initial_error: f64,
    pub final_error: f64,
    pub peak_error: f64,
    /// First time after which the error stays within 1% of its initial
    /// value; `None` if it never does.
    pub settling_time: Option<f64>,
}

impl RunMetrics {
    pub fn from_series(h: f64, norms: &[f64]) -> Self {
        let initial_error = norms.first().copied().unwrap_or(0.0);
        let band = SETTLING_FRACTION * initial_error;
        let last_outside = norms.iter().rposition(|&e| e > band);
        let settling_time = match last_outside {
            None => Some(0.0),
            Some(k) if k + 1 < norms.len() => Some((k + 1) as f64 * h),
            Some(_) => None,
        };
        Self {
            initial_error,
            final_error: norms.last().copied().unwrap_or(0.0),
            peak_error: norms.iter().copied().fold(0.0, f64::max),
            settling_time,
        }
    }

    /// Final error below `fraction` of the initial one.
    pub fn converged(&self, fraction: f64) -> bool {
        self.final_error <= fraction * self.initial_error
    }
}

/// Sampled record of a closed-loop run. Column `k` of every matrix is the
/// sample at `t = k h`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRun {
    pub h: f64,
    pub leader: DMatrix<f64>,
    pub leader_output: DMatrix<f64>,
    pub agents: Vec<DMatrix<f64>>,
    pub outputs: Vec<DMatrix<f64>>,
    /// Controller states; empty for static feedback.
    pub zeta: Vec<DMatrix<f64>>,
    /// Stacked `δ` for homogeneous runs, stacked `y_i - y0` otherwise.
    pub errors: DMatrix<f64>,
    /// `‖δ‖` for homogeneous runs, `max_i ‖y_i - y0‖` otherwise.
    pub error_norms: Vec<f64>,
    pub metrics: RunMetrics,
    /// Largest `‖Δδ/Δt - A_c δ‖ / (1 + ‖δ‖)` over interior samples.
    pub derivative_mismatch: Option<f64>,
    /// Largest jump of the data-generated leader motion at each period boundary.
    pub boundary_jumps: Vec<f64>,
}

impl NetworkRun {
    pub fn len(&self) -> usize {
        self.error_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.error_norms.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    /// Sample index of time `t`, rounded to the grid.
    pub fn index(&self, t: f64) -> usize {
        ((t / self.h).round() as usize).min(self.len().saturating_sub(1))
    }

    /// Largest error norm over samples with `t >= from`.
    pub fn max_error_after(&self, from: f64) -> f64 {
        self.error_norms[self.index(from)..]
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// Writes `t`, leader state and output, each agent's state and output,
    /// and the error norm, every `stride` samples.
    pub fn write_csv<W: Write>(&self, mut w: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.leader.nrows()).map(|j| format!("x0_{j}")));
        header.extend((1..=self.leader_output.nrows()).map(|j| format!("y0_{j}")));
        for (i, (x, y)) in self.agents.iter().zip(&self.outputs).enumerate() {
            header.extend((1..=x.nrows()).map(|j| format!("x{}_{j}", i + 1)));
            header.extend((1..=y.nrows()).map(|j| format!("y{}_{j}", i + 1)));
        }
        for (i, z) in self.zeta.iter().enumerate() {
            header.extend((1..=z.nrows()).map(|j| format!("zeta{}_{j}", i + 1)));
        }
        header.push("error_norm".into());
        writeln!(w, "{}", header.join(","))?;

        for k in (0..self.len()).step_by(stride) {
            let mut row = vec![fmt_num(self.time(k))];
            row.extend(self.leader.column(k).iter().map(|v| fmt_num(*v)));
            row.extend(self.leader_output.column(k).iter().map(|v| fmt_num(*v)));
            for (x, y) in self.agents.iter().zip(&self.outputs) {
                row.extend(x.column(k).iter().map(|v| fmt_num(*v)));
                row.extend(y.column(k).iter().map(|v| fmt_num(*v)));
            }
            for z in &self.zeta {
                row.extend(z.column(k).iter().map(|v| fmt_num(*v)));
            }
            row.push(fmt_num(self.error_norms[k]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Python script that plots the first output of the leader and of every
/// agent from a CSV written by [`NetworkRun::write_csv`].
pub fn plot_script(csv_file: &str, agents: usize, image_file: &str) -> String {
    let mut s = String::new();
    s.push_str("import csv\n\nimport matplotlib\n\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\n\n");
    s.push_str(&format!(
        "with open({csv_file:?}) as f:\n    rows = list(csv.DictReader(f))\n\n"
    ));
    s.push_str("t = [float(r[\"t\"]) for r in rows]\n");
    s.push_str("fig, ax = plt.subplots(figsize=(7, 4))\n");
    s.push_str(
        "ax.plot(t, [float(r[\"y0_1\"]) for r in rows], \"k--\", linewidth=2, label=\"leader\")\n",
    );
    for i in 1..=agents {
        s.push_str(&format!(
            "ax.plot(t, [float(r[\"y{i}_1\"]) for r in rows], label=\"agent {i}\")\n"
        ));
    }
    s.push_str(
        "ax.set_xlabel(\"time (s)\")\nax.set_ylabel(\"output\")\nax.grid(True)\nax.legend()\n",
    );
    s.push_str(&format!(
        "fig.tight_layout()\nfig.savefig({image_file:?}, dpi=150)\n"
    ));
    s
}

/// `A_c = I ⊗ A - ((L+G) ⊗ B) blkdiag{K_i}`.
pub fn error_system_matrix(
    sys: &LtiSystem,
    top: &Topology,
    gains: &[DMatrix<f64>],
) -> DMatrix<f64> {
    error_system_matrix_global(sys, top, &linalg::block_diag(gains))
}

/// `A_c = I ⊗ A - ((L+G) ⊗ B) K` for a stacked gain `K`.
pub fn error_system_matrix_global(
    sys: &LtiSystem,
    top: &Topology,
    gain: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = top.agents();
    DMatrix::<f64>::identity(n, n).kronecker(sys.a())
        - top.leader_laplacian().kronecker(sys.b()) * gain
}

/// `δ_i = Σ_j a_ij (x_i - x_j) + g_i (x_i - x0)` stacked over agents.
pub fn sync_error(top: &Topology, states: &[DVector<f64>], leader: &DVector<f64>) -> DVector<f64> {
    let n = leader.len();
    let mut delta = DVector::zeros(n * states.len());
    for (i, xi) in states.iter().enumerate() {
        let mut d = (xi - leader) * top.pin(i);
        for (j, xj) in states.iter().enumerate() {
            let w = top.weight(i, j);
            if w != 0.0 {
                d += (xi - xj) * w;
            }
        }
        delta.rows_mut(i * n, n).copy_from(&d);
    }
    delta
}

fn check_finite(v: &[DVector<f64>], time: f64) -> Result<()> {
    if v.iter().all(|x| x.iter().all(|e| e.is_finite())) {
        Ok(())
    } else {
        Err(Error::Divergence { time })
    }
}

fn axpy(x: &[DVector<f64>], k: &[DVector<f64>], a: f64) -> Vec<DVector<f64>> {
    x.iter().zip(k).map(|(x, k)| x + k * a).collect()
}

fn rk4_combine(x: &mut [DVector<f64>], k: [&[DVector<f64>]; 4], h: f64) {
    for (i, xi) in x.iter_mut().enumerate() {
        *xi += (&k[0][i] + &k[1][i] * 2.0 + &k[2][i] * 2.0 + &k[3][i]) * (h / 6.0);
    }
}

/// Identical agents under `u_i = -K_i δ_i` following the autonomous leader
/// `x0' = A x0`.
pub fn run_homogeneous(
    sys: &LtiSystem,
    top: &Topology,
    gains: &[DMatrix<f64>],
    initial: &[DVector<f64>],
    leader0: &DVector<f64>,
    duration: f64,
    h: f64,
) -> Result<NetworkRun> {
    if gains.len() != top.agents() || gains.iter().any(|k| k.shape() != (sys.m(), sys.n())) {
        return Err(Error::Dimension(format!(
            "expected {} gains of shape {}x{}",
            top.agents(),
            sys.m(),
            sys.n()
        )));
    }
    run_homogeneous_global(
        sys,
        top,
        &linalg::block_diag(gains),
        initial,
        leader0,
        duration,
        h,
    )
}

/// Identical agents under the stacked feedback `u = -K δ`, `K` of size `mN x nN`.
pub fn run_homogeneous_global(
    sys: &LtiSystem,
    top: &Topology,
    gain: &DMatrix<f64>,
    initial: &[DVector<f64>],
    leader0: &DVector<f64>,
    duration: f64,
    h: f64,
) -> Result<NetworkRun> {
    let (n, m, agents) = (sys.n(), sys.m(), top.agents());
    if gain.shape() != (m * agents, n * agents) {
        return Err(Error::Dimension(format!(
            "gain is {}x{}, expected {}x{}",
            gain.nrows(),
            gain.ncols(),
            m * agents,
            n * agents
        )));
    }
    if initial.len() != agents || initial.iter().chain([leader0]).any(|x| x.len() != n) {
        return Err(Error::Dimension(
            "initial states do not match the agents".into(),
        ));
    }
    let steps = grid_steps(duration, h)?;

    // state layout: [leader, agent 1, ..., agent N]
    let field = |x: &[DVector<f64>]| -> Vec<DVector<f64>> {
        let u = -(gain * sync_error(top, &x[1..], &x[0]));
        let mut d = Vec::with_capacity(agents + 1);
        d.push(sys.a() * &x[0]);
        for i in 0..agents {
            d.push(sys.derivative(&x[i + 1], &u.rows(i * m, m).into_owned()));
        }
        d
    };

    let mut x: Vec<DVector<f64>> = std::iter::once(leader0.clone())
        .chain(initial.iter().cloned())
        .collect();
    let mut leader = DMatrix::zeros(n, steps + 1);
    let mut agent_rec = vec![DMatrix::zeros(n, steps + 1); agents];
    let mut errors = DMatrix::zeros(n * agents, steps + 1);
    for k in 0..=steps {
        leader.set_column(k, &x[0]);
        for i in 0..agents {
            agent_rec[i].set_column(k, &x[i + 1]);
        }
        errors.set_column(k, &sync_error(top, &x[1..], &x[0]));
        if k == steps {
            break;
        }
        let k1 = field(&x);
        let k2 = field(&axpy(&x, &k1, h / 2.0));
        let k3 = field(&axpy(&x, &k2, h / 2.0));
        let k4 = field(&axpy(&x, &k3, h));
        rk4_combine(&mut x, [&k1, &k2, &k3, &k4], h);
        check_finite(&x, (k + 1) as f64 * h)?;
    }

    let ac = error_system_matrix_global(sys, top, gain);
    let mut mismatch: f64 = 0.0;
    for k in 1..steps {
        let fd = (errors.column(k + 1) - errors.column(k - 1)) / (2.0 * h);
        let model = &ac * errors.column(k);
        mismatch = mismatch.max((fd - model).norm() / (1.0 + errors.column(k).norm()));
    }

    let outputs = agent_rec.iter().map(|x| sys.c() * x).collect();
    let error_norms: Vec<f64> = errors.column_iter().map(|c| c.norm()).collect();
    Ok(NetworkRun {
        h,
        leader_output: sys.c() * &leader,
        leader,
        agents: agent_rec,
        outputs,
        zeta: Vec::new(),
        metrics: RunMetrics::from_series(h, &error_norms),
        errors,
        error_norms,
        derivative_mismatch: (steps >= 2).then_some(mismatch),
        boundary_jumps: Vec::new(),
    })
}

/// Initial conditions of a heterogeneous run.
#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneousStart {
    pub agents: Vec<DVector<f64>>,
    pub leader: DVector<f64>,
}

/// Heterogeneous followers with dynamic controllers. `h` must be an even
/// multiple of the leader data step so that RK4 midpoints land on recorded
/// samples, and must divide the data period. Controllers are advanced in
/// place.
#[allow(clippy::too_many_arguments)]
pub fn run_heterogeneous(
    systems: &[LtiSystem],
    leader_sys: &LtiSystem,
    leader_data: &LeaderData,
    top: &Topology,
    controllers: &mut [DynamicController],
    start: &HeterogeneousStart,
    duration: f64,
    h: f64,
) -> Result<NetworkRun> {
    let agents = top.agents();
    if systems.len() != agents || controllers.len() != agents || start.agents.len() != agents {
        return Err(Error::Dimension(format!(
            "{agents} agents but inconsistent systems, controllers or states"
        )));
    }
    let n0 = leader_sys.n();
    if start.leader.len() != n0 || leader_data.n() != n0 {
        return Err(Error::Dimension(
            "leader state does not match leader data".into(),
        ));
    }
    for (i, (sys, x)) in systems.iter().zip(&start.agents).enumerate() {
        if x.len() != sys.n() || sys.p() != leader_sys.p() {
            return Err(Error::Dimension(format!(
                "agent {} does not match its initial state or the leader output",
                i + 1
            )));
        }
    }
    let data_step = leader_data.hx.step();
    grid_steps(h / 2.0, data_step).map_err(|_| Error::OffGrid(h))?;
    let per_period = grid_steps(leader_data.period, h)?;
    let steps = grid_steps(duration, h)?;
    let t0 = controllers
        .iter()
        .map(|c| c.period_index)
        .max()
        .unwrap_or(0) as f64
        * leader_data.period;

    // state layout: [leader, x_1..x_N, ζ_1..ζ_N]
    let field =
        |t: f64, s: &[DVector<f64>], ctrl: &[DynamicController]| -> Result<Vec<DVector<f64>>> {
            let x0 = &s[0];
            let zeta = &s[1 + agents..];
            let mut d = Vec::with_capacity(s.len());
            d.push(leader_sys.a() * x0);
            for i in 0..agents {
                let u = ctrl[i].control_at(&s[1 + i], &zeta[i]);
                d.push(systems[i].derivative(&s[1 + i], &u));
            }
            for i in 0..agents {
                let neighbors: Vec<(f64, &DVector<f64>)> = (0..agents)
                    .filter(|&j| top.weight(i, j) != 0.0)
                    .map(|j| (top.weight(i, j), &zeta[j]))
                    .collect();
                let coupling = Coupling {
                    neighbors: &neighbors,
                    pin: top.pin(i),
                    leader_state: x0,
                };
                d.push(ctrl[i].zeta_derivative(leader_data, t, &zeta[i], coupling)?);
            }
            Ok(d)
        };

    let mut s: Vec<DVector<f64>> = std::iter::once(start.leader.clone())
        .chain(start.agents.iter().cloned())
        .chain(controllers.iter().map(|c| c.zeta.clone()))
        .collect();
    let p = leader_sys.p();
    let mut leader = DMatrix::zeros(n0, steps + 1);
    let mut agent_rec: Vec<DMatrix<f64>> = systems
        .iter()
        .map(|sys| DMatrix::zeros(sys.n(), steps + 1))
        .collect();
    let mut zeta_rec = vec![DMatrix::zeros(n0, steps + 1); agents];
    let mut errors = DMatrix::zeros(p * agents, steps + 1);
    let mut boundary_jumps = Vec::new();

    for k in 0..=steps {
        leader.set_column(k, &s[0]);
        let y0 = leader_sys.output(&s[0]);
        for i in 0..agents {
            agent_rec[i].set_column(k, &s[1 + i]);
            zeta_rec[i].set_column(k, &s[1 + agents + i]);
            errors
                .rows_mut(i * p, p)
                .column_mut(k)
                .copy_from(&(systems[i].output(&s[1 + i]) - &y0));
        }
        if k == steps {
            break;
        }
        let t = t0 + k as f64 * h;
        let k1 = field(t, &s, controllers)?;
        let k2 = field(t + h / 2.0, &axpy(&s, &k1, h / 2.0), controllers)?;
        let k3 = field(t + h / 2.0, &axpy(&s, &k2, h / 2.0), controllers)?;
        let k4 = field(t + h, &axpy(&s, &k3, h), controllers)?;
        rk4_combine(&mut s, [&k1, &k2, &k3, &k4], h);
        let t_next = t0 + (k + 1) as f64 * h;
        check_finite(&s, t_next)?;

        if (k + 1) % per_period == 0 {
            let mut jump: f64 = 0.0;
            for (i, c) in controllers.iter_mut().enumerate() {
                let before = c.replayed_state(leader_data, t_next)?;
                c.on_period_boundary(s[1 + agents + i].clone(), leader_data)?;
                let after = c.replayed_state(leader_data, t_next)?;
                jump = jump.max((after - before).norm());
            }
            boundary_jumps.push(jump);
        } else {
            for (i, c) in controllers.iter_mut().enumerate() {
                c.zeta = s[1 + agents + i].clone();
            }
        }
    }

    let outputs = systems
        .iter()
        .zip(&agent_rec)
        .map(|(sys, x)| sys.c() * x)
        .collect();
    let error_norms: Vec<f64> = (0..=steps)
        .map(|k| {
            (0..agents)
                .map(|i| errors.view((i * p, k), (p, 1)).norm())
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(NetworkRun {
        h,
        leader_output: leader_sys.c() * &leader,
        leader,
        agents: agent_rec,
        outputs,
        zeta: zeta_rec,
        metrics: RunMetrics::from_series(h, &error_norms),
        errors,
        error_norms,
        derivative_mismatch: None,
        boundary_jumps,
    })
}

/// Model-based controller states `ζ_i' = A0 ζ_i - Σ a_ij (ζ_i - ζ_j) - g_i (ζ_i - x0)`
/// together with the leader, sampled every `h`. Returns `[leader, ζ_1..ζ_N]`.
pub fn model_zeta_reference(
    leader_sys: &LtiSystem,
    top: &Topology,
    zeta0: &[DVector<f64>],
    leader0: &DVector<f64>,
    duration: f64,
    h: f64,
) -> Result<Vec<DMatrix<f64>>> {
    let agents = top.agents();
    let steps = grid_steps(duration, h)?;
    let a0 = leader_sys.a();
    let field = |s: &[DVector<f64>]| -> Vec<DVector<f64>> {
        let mut d = vec![a0 * &s[0]];
        for i in 0..agents {
            let zi = &s[1 + i];
            let mut di = a0 * zi - (zi - &s[0]) * top.pin(i);
            for j in 0..agents {
                let w = top.weight(i, j);
                if w != 0.0 {
                    di -= (zi - &s[1 + j]) * w;
                }
            }
            d.push(di);
        }
        d
    };
    let mut s: Vec<DVector<f64>> = std::iter::once(leader0.clone())
        .chain(zeta0.iter().cloned())
        .collect();
    let mut rec = vec![DMatrix::zeros(leader0.len(), steps + 1); agents + 1];
    for k in 0..=steps {
        for (r, x) in rec.iter_mut().zip(&s) {
            r.set_column(k, x);
        }
        if k == steps {
            break;
        }
        let k1 = field(&s);
        let k2 = field(&axpy(&s, &k1, h / 2.0));
        let k3 = field(&axpy(&s, &k2, h / 2.0));
        let k4 = field(&axpy(&s, &k3, h));
        rk4_combine(&mut s, [&k1, &k2, &k3, &k4], h);
        check_finite(&s, (k + 1) as f64 * h)?;
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settling_time_metric() {
        let m = RunMetrics::from_series(0.5, &[1.0, 0.5, 0.02, 0.005, 0.001]);
        assert_eq!(m.settling_time, Some(1.5));
        assert_eq!(
            RunMetrics::from_series(0.5, &[0.0, 0.0]).settling_time,
            Some(0.0)
        );
        assert_eq!(
            RunMetrics::from_series(0.5, &[1.0, 1.0]).settling_time,
            None
        );
    }

    #[test]
    fn leader_start_stays_synchronized() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let top = Topology::from_edges(2, &[(0, 1, 1.0)], &[(0, 1.0)]).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let k = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let run = run_homogeneous(
            &sys,
            &top,
            &[k.clone(), k],
            &[x0.clone(), x0.clone()],
            &x0,
            1.0,
            1e-3,
        )
        .unwrap();
        assert!(run.error_norms.iter().all(|&e| e == 0.0));
        assert_eq!(run.metrics.settling_time, Some(0.0));
    }

    #[test]
    fn sync_error_single_agent() {
        let top = Topology::from_edges(1, &[], &[(0, 2.0)]).unwrap();
        let d = sync_error(
            &top,
            &[DVector::from_vec(vec![3.0])],
            &DVector::from_vec(vec![1.0]),
        );
        assert_eq!(d[0], 4.0);
    }
}
