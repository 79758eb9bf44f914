//! Continuous-time LTI plants, fixed-step simulation, piecewise constant
//! persistently exciting inputs and the time-shifted row-data matrices built
//! from recorded trajectories.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;

/// Default integration step (s).
pub const DEFAULT_STEP: f64 = 1e-3;
/// Default hold period of the excitation input (s).
pub const DEFAULT_PERIOD: f64 = 0.37;

const GRID_TOL: f64 = 1e-9;
const MAX_REDRAWS: usize = 16;

/// `x' = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Dimension(format!(
                "A must be square with n >= 1, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "C must be p x {n} with p >= 1, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if !(linalg::all_finite(&a) && linalg::all_finite(&b) && linalg::all_finite(&c)) {
            return Err(Error::InvalidArgument(
                "system matrices must be finite".into(),
            ));
        }
        Ok(Self { a, b, c })
    }

    /// A system without inputs (`m = 0`), e.g. a leader.
    pub fn autonomous(a: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, DMatrix::zeros(n, 0), c)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }
}

/// Exogenous input applied during [`simulate`]. The simulator samples the
/// signal at the start of every integration step and holds it over the step.
pub trait InputSignal {
    fn dim(&self) -> usize;
    fn value(&self, t: f64) -> DVector<f64>;
}

/// Constant input, `u(t) = value`.
#[derive(Debug, Clone)]
pub struct ConstantInput(pub DVector<f64>);

impl ConstantInput {
    pub fn zeros(m: usize) -> Self {
        Self(DVector::zeros(m))
    }
}

impl InputSignal for ConstantInput {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn value(&self, _t: f64) -> DVector<f64> {
        self.0.clone()
    }
}

/// Piecewise constant input `u(t + jT) = mu_j` on `[0, M T)` whose hold values
/// form a full-rank block-Hankel matrix of depth `order`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcpeInput {
    period: f64,
    /// m x M, column j is mu_j.
    values: DMatrix<f64>,
    order: usize,
}

impl PcpeInput {
    /// Validates the block-Hankel rank condition before accepting `values`.
    pub fn new(values: DMatrix<f64>, period: f64, order: usize) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "hold period must be positive, got {period}"
            )));
        }
        if order == 0 {
            return Err(Error::InvalidArgument(
                "excitation order must be >= 1".into(),
            ));
        }
        let (m, holds) = values.shape();
        let needed = min_holds(m, order);
        if holds < needed {
            return Err(Error::NotExciting(format!(
                "{holds} holds given, at least L(m+1)-1 = {needed} are required"
            )));
        }
        let rank = linalg::rank(&block_hankel(&values, order), linalg::RANK_TOL);
        if rank != m * order {
            return Err(Error::NotExciting(format!(
                "block-Hankel matrix of depth {order} has rank {rank}, expected {}",
                m * order
            )));
        }
        Ok(Self {
            period,
            values,
            order,
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn holds(&self) -> usize {
        self.values.ncols()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn duration(&self) -> f64 {
        self.period * self.holds() as f64
    }

    pub fn hankel(&self) -> DMatrix<f64> {
        block_hankel(&self.values, self.order)
    }
}

impl InputSignal for PcpeInput {
    fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Beyond the last hold the final value is kept.
    fn value(&self, t: f64) -> DVector<f64> {
        let j = ((t / self.period) + GRID_TOL).floor().max(0.0) as usize;
        self.values.column(j.min(self.holds() - 1)).into_owned()
    }
}

/// Smallest number of holds for which a depth-`order` block-Hankel matrix
/// can have rank `m * order`.
pub fn min_holds(m: usize, order: usize) -> usize {
    (order * (m + 1)).saturating_sub(1)
}

/// Depth-`order` block-Hankel matrix of the columns of `values`
/// (`m*order` x `M-order+1`).
pub fn block_hankel(values: &DMatrix<f64>, order: usize) -> DMatrix<f64> {
    let (m, holds) = values.shape();
    if order == 0 || holds < order {
        return DMatrix::zeros(m * order, 0);
    }
    let cols = holds - order + 1;
    let mut h = DMatrix::zeros(m * order, cols);
    for i in 0..order {
        for j in 0..cols {
            h.view_mut((i * m, j), (m, 1))
                .copy_from(&values.column(i + j));
        }
    }
    h
}

/// Draws hold values uniformly on `[-1, 1]^m` from a seeded generator and
/// returns the first draw satisfying the rank condition.
pub fn generate_pcpe(
    m: usize,
    order: usize,
    period: f64,
    holds: usize,
    seed: u64,
) -> Result<PcpeInput> {
    if m == 0 {
        return Err(Error::InvalidArgument("PCPE input needs m >= 1".into()));
    }
    let needed = min_holds(m, order);
    if holds < needed {
        return Err(Error::NotExciting(format!(
            "{holds} holds requested, at least L(m+1)-1 = {needed} are required"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = None;
    for _ in 0..MAX_REDRAWS {
        let values = DMatrix::from_fn(m, holds, |_, _| rng.random_range(-1.0..=1.0));
        match PcpeInput::new(values, period, order) {
            Ok(input) => return Ok(input),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::NotExciting("rank check failed".into())))
}

/// Default number of holds `(n+1)(m+1) + 2` for an order-`n+1` excitation.
pub fn default_holds(n: usize, m: usize) -> usize {
    (n + 1) * (m + 1) + 2
}

/// Number of steps of size `h` in `duration`, rejecting non-integer ratios.
pub fn grid_steps(duration: f64, h: f64) -> Result<usize> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let ratio = duration / h;
    let steps = ratio.round();
    if steps < 1.0 || (ratio - steps).abs() > GRID_TOL * ratio.max(1.0) {
        return Err(Error::OffGrid(duration));
    }
    Ok(steps as usize)
}

/// Sampled input/state/derivative/output record. Column `k` of every channel
/// holds the sample at `t_k = k h`, `k = 0..=K` (the end point is included).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub u: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub dx: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    pub fn duration(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.x.column(k).into_owned()
    }

    pub fn final_state(&self) -> DVector<f64> {
        self.state(self.len() - 1)
    }

    pub fn channel(&self, channel: Channel) -> &DMatrix<f64> {
        match channel {
            Channel::Input => &self.u,
            Channel::State => &self.x,
            Channel::Derivative => &self.dx,
            Channel::Output => &self.y,
        }
    }

    /// Writes `t,u_1..u_m,x_1..x_n,dx_1..dx_n,y_1..y_p`, one row per sample.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.u.nrows()).map(|i| format!("u_{i}")));
        header.extend((1..=self.x.nrows()).map(|i| format!("x_{i}")));
        header.extend((1..=self.dx.nrows()).map(|i| format!("dx_{i}")));
        header.extend((1..=self.y.nrows()).map(|i| format!("y_{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![fmt_num(self.time(k))];
            for ch in [&self.u, &self.x, &self.dx, &self.y] {
                row.extend(ch.column(k).iter().map(|v| fmt_num(*v)));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let count = |prefix: &str| header.iter().filter(|c| c.starts_with(prefix)).count();
        let (m, n, p) = (count("u_"), count("x_"), count("y_"));
        if header.get(0) != Some("t") || count("dx_") != n || header.len() != 1 + m + 2 * n + p {
            return Err(Error::Parse(format!(
                "unexpected trajectory header: {header:?}"
            )));
        }
        let mut times = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != header.len() {
                return Err(Error::Parse("ragged trajectory row".into()));
            }
            times.push(vals[0]);
            cols.push(vals[1..].to_vec());
        }
        if times.len() < 2 {
            return Err(Error::Parse("trajectory needs at least two samples".into()));
        }
        let h = times[1] - times[0];
        let k = times.len();
        let pick = |start: usize, rows: usize| DMatrix::from_fn(rows, k, |i, j| cols[j][start + i]);
        Ok(Self {
            h,
            u: pick(0, m),
            x: pick(m, n),
            dx: pick(m + n, n),
            y: pick(m + 2 * n, p),
        })
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:e}")
}

/// Fixed-step classical RK4 with the input held over each step. `dx` is
/// recorded from the model at every node.
pub fn simulate(
    sys: &LtiSystem,
    x0: &DVector<f64>,
    input: &dyn InputSignal,
    duration: f64,
    h: f64,
) -> Result<Trajectory> {
    if x0.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, expected {}",
            x0.len(),
            sys.n()
        )));
    }
    if input.dim() != sys.m() {
        return Err(Error::Dimension(format!(
            "input has dimension {}, expected {}",
            input.dim(),
            sys.m()
        )));
    }
    let steps = grid_steps(duration, h)?;
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    let mut traj = Trajectory {
        h,
        u: DMatrix::zeros(m, steps + 1),
        x: DMatrix::zeros(n, steps + 1),
        dx: DMatrix::zeros(n, steps + 1),
        y: DMatrix::zeros(p, steps + 1),
    };
    let mut x = x0.clone();
    for k in 0..=steps {
        let t = k as f64 * h;
        let u = input.value(t);
        let dx = sys.derivative(&x, &u);
        traj.u.set_column(k, &u);
        traj.x.set_column(k, &x);
        traj.dx.set_column(k, &dx);
        traj.y.set_column(k, &sys.output(&x));
        if k == steps {
            break;
        }
        let k1 = dx;
        let k2 = sys.derivative(&(&x + &k1 * (h / 2.0)), &u);
        let k3 = sys.derivative(&(&x + &k2 * (h / 2.0)), &u);
        let k4 = sys.derivative(&(&x + &k3 * h), &u);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { time: t + h });
        }
    }
    Ok(traj)
}

/// Whether `period` avoids every resonant value `2 pi k / |Im(l_j - l_k)|`.
/// Needs the true model, so it only serves as a test oracle.
pub fn check_period_admissible(sys: &LtiSystem, period: f64) -> bool {
    let eig = linalg::eigenvalues(sys.a());
    for (i, li) in eig.iter().enumerate() {
        for lk in &eig[i + 1..] {
            let d = (li.im - lk.im).abs();
            if d <= GRID_TOL {
                continue;
            }
            let base = 2.0 * PI / d;
            let kappa = (period / base).round();
            if kappa >= 1.0 && (period - kappa * base).abs() <= GRID_TOL {
                return false;
            }
        }
    }
    true
}

/// Recorded signal a row-data matrix is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Input,
    State,
    Derivative,
    Output,
}

/// `H_T(xi(t)) = [xi(t) xi(t+T) ... xi(t+(M-1)T)]` sampled on the grid
/// `t = s h`, `s = 0..=S` with `S h = T`. The entry `s = S` holds the
/// samples at `t = T`, where a forced derivative already sees the next hold.
#[derive(Debug, Clone, PartialEq)]
pub struct RowData {
    samples: Vec<DMatrix<f64>>,
    h: f64,
}

impl RowData {
    /// Samples per period `S`.
    pub fn period_samples(&self) -> usize {
        self.samples.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn at(&self, s: usize) -> &DMatrix<f64> {
        &self.samples[s]
    }

    pub fn at_zero(&self) -> &DMatrix<f64> {
        &self.samples[0]
    }

    /// Looks up local time `tau` in `[0, T]`; it must fall on the grid.
    pub fn at_time(&self, tau: f64) -> Result<&DMatrix<f64>> {
        let s = tau / self.h;
        let idx = s.round();
        if (s - idx).abs() > 1e-6 || idx < 0.0 || idx as usize > self.period_samples() {
            return Err(Error::OffGrid(tau));
        }
        Ok(&self.samples[idx as usize])
    }

    /// Grid indices of `count` equispaced times in `[0, T)`, starting at 0.
    pub fn check_indices(&self, count: usize) -> Vec<usize> {
        let s = self.period_samples();
        let mut idx: Vec<usize> = (0..count).map(|k| k * s / count).collect();
        idx.dedup();
        idx
    }
}

/// Builds `H_T` of one channel from `traj`; `period` must be a multiple of
/// the trajectory step and the record must cover `[0, M T]`.
pub fn hankel_row(
    traj: &Trajectory,
    channel: Channel,
    period: f64,
    holds: usize,
) -> Result<RowData> {
    let s_per = grid_steps(period, traj.h)?;
    if holds == 0 {
        return Err(Error::InvalidArgument("need at least one hold".into()));
    }
    let needed = holds * s_per + 1;
    if traj.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "trajectory has {} samples, {needed} needed for {holds} periods",
            traj.len()
        )));
    }
    let sig = traj.channel(channel);
    let samples = (0..=s_per)
        .map(|s| DMatrix::from_fn(sig.nrows(), holds, |i, j| sig[(i, s + j * s_per)]))
        .collect();
    Ok(RowData { samples, h: traj.h })
}

/// The full set `H_T(u)`, `H_T(x(t))`, `H_T(x'(t))`, `H_T(y(t))` of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrixSet {
    pub hu: DMatrix<f64>,
    pub hx: RowData,
    pub hdx: RowData,
    pub hy: RowData,
    pub period: f64,
    pub holds: usize,
}

impl DataMatrixSet {
    pub fn from_trajectory(traj: &Trajectory, period: f64, holds: usize) -> Result<Self> {
        let hu = hankel_row(traj, Channel::Input, period, holds)?
            .at_zero()
            .clone();
        Ok(Self {
            hu,
            hx: hankel_row(traj, Channel::State, period, holds)?,
            hdx: hankel_row(traj, Channel::Derivative, period, holds)?,
            hy: hankel_row(traj, Channel::Output, period, holds)?,
            period,
            holds,
        })
    }
}
