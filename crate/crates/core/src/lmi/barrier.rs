//! Log-barrier path following for
//!
//! ```text
//! maximize t  subject to  C_k + Σ_j y_j A_kj - t I ⪰ 0  for every block k,
//!                         ‖y‖ ≤ R.
//! ```
//!
//! Each centering step minimizes `-s t - Σ_k log det S_k - log(R² - ‖y‖²)`
//! with damped Newton iterations; `s` grows geometrically until the duality
//! gap bound `(Σ_k size_k + 1) / s` falls below the requested accuracy.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::problem::SolverOptions;
use crate::error::{Error, Result};
use crate::linalg;

pub(crate) struct MarginBlock {
    pub constant: DMatrix<f64>,
    pub basis: Vec<DMatrix<f64>>,
}

impl MarginBlock {
    fn size(&self) -> usize {
        self.constant.nrows()
    }

    fn slack(&self, y: &DVector<f64>, t: f64) -> DMatrix<f64> {
        let mut s = self.constant.clone();
        for (j, a) in self.basis.iter().enumerate() {
            if y[j] != 0.0 {
                s += a * y[j];
            }
        }
        for i in 0..s.nrows() {
            s[(i, i)] -= t;
        }
        s
    }
}

const GROWTH: f64 = 10.0;
const CENTERED: f64 = 1e-9;

struct Point {
    y: DVector<f64>,
    t: f64,
}

/// Barrier value, or `None` outside the domain.
fn barrier_value(blocks: &[MarginBlock], radius: f64, s: f64, p: &Point) -> Option<f64> {
    let ball = radius * radius - p.y.norm_squared();
    if ball <= 0.0 {
        return None;
    }
    let mut f = -s * p.t - ball.ln();
    for b in blocks {
        let chol = Cholesky::new(b.slack(&p.y, p.t))?;
        f -= 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    }
    f.is_finite().then_some(f)
}

/// Gradient and Hessian of the barrier in the variables `(y, t)`.
fn derivatives(
    blocks: &[MarginBlock],
    radius: f64,
    s: f64,
    p: &Point,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let q = p.y.len();
    let mut g = DVector::zeros(q + 1);
    let mut h = DMatrix::zeros(q + 1, q + 1);
    g[q] = -s;
    for b in blocks {
        let size = b.size();
        let chol = Cholesky::new(b.slack(&p.y, p.t))
            .ok_or_else(|| Error::Numerical("iterate left the feasible region".into()))?;
        let l = chol.l();
        // columns: vec(L⁻¹ A_j L⁻ᵀ), last one for the -I coefficient of t
        let mut gm = DMatrix::zeros(size * size, q + 1);
        for (j, a) in b.basis.iter().enumerate() {
            let x = l.solve_lower_triangular(a).expect("nonsingular factor");
            let gj = l
                .solve_lower_triangular(&x.transpose())
                .expect("nonsingular factor");
            g[j] -= gj.trace();
            gm.set_column(j, &DVector::from_column_slice(gj.as_slice()));
        }
        let linv = l
            .solve_lower_triangular(&DMatrix::identity(size, size))
            .expect("nonsingular factor");
        let gt = -(&linv * linv.transpose());
        g[q] -= gt.trace();
        gm.set_column(q, &DVector::from_column_slice(gt.as_slice()));
        h += gm.transpose() * &gm;
    }
    let ball = radius * radius - p.y.norm_squared();
    for j in 0..q {
        g[j] += 2.0 * p.y[j] / ball;
        h[(j, j)] += 2.0 / ball;
    }
    let yy = &p.y * p.y.transpose() * (4.0 / (ball * ball));
    let mut hyy = h.view_mut((0, 0), (q, q));
    hyy += &yy;
    Ok((g, h))
}

fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> Result<DVector<f64>> {
    let scale = h.diagonal().amax().max(1.0);
    let mut shift = 0.0;
    for _ in 0..12 {
        let mut hs = h.clone();
        for i in 0..hs.nrows() {
            hs[(i, i)] += shift;
        }
        if let Some(chol) = Cholesky::<f64, Dyn>::new(hs) {
            return Ok(-chol.solve(g));
        }
        shift = if shift == 0.0 {
            1e-14 * scale
        } else {
            shift * 100.0
        };
    }
    Err(Error::Numerical(
        "barrier Hessian is not positive definite".into(),
    ))
}

/// Returns the final `(y, t)`; `t` is strictly feasible at `y`.
pub(crate) fn maximize_margin(
    blocks: &[MarginBlock],
    q: usize,
    opts: &SolverOptions,
) -> Result<(DVector<f64>, f64)> {
    let radius = opts.norm_bound;
    let y = DVector::zeros(q);
    let start = blocks
        .iter()
        .map(|b| linalg::min_sym_eigenvalue(&b.constant))
        .fold(f64::INFINITY, f64::min);
    if !start.is_finite() {
        return Err(Error::Numerical("non-finite constraint data".into()));
    }
    let mut p = Point { y, t: start - 1.0 };
    let degree = blocks.iter().map(|b| b.size()).sum::<usize>() as f64 + 1.0;
    let mut s = 1.0;
    let mut steps = 0usize;
    let mut first_centering = true;

    'outer: loop {
        loop {
            let (g, h) = derivatives(blocks, radius, s, &p)?;
            let dir = newton_direction(&g, &h)?;
            let decrement = -g.dot(&dir);
            if decrement / 2.0 <= CENTERED {
                break;
            }
            steps += 1;
            if steps > opts.max_newton_steps {
                if first_centering {
                    return Err(Error::Numerical(format!(
                        "barrier centering did not converge in {} Newton steps",
                        opts.max_newton_steps
                    )));
                }
                break 'outer;
            }
            let f0 = barrier_value(blocks, radius, s, &p)
                .ok_or_else(|| Error::Numerical("iterate left the feasible region".into()))?;
            let mut alpha = 1.0;
            let accepted = loop {
                let trial = Point {
                    y: &p.y + dir.rows(0, q) * alpha,
                    t: p.t + dir[q] * alpha,
                };
                if let Some(f) = barrier_value(blocks, radius, s, &trial) {
                    if f <= f0 - 0.25 * alpha * decrement {
                        break Some(trial);
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    break None;
                }
            };
            match accepted {
                Some(next) => p = next,
                // rounding noise dominates; the current point is as good as it gets
                None if !first_centering => break 'outer,
                None => {
                    return Err(Error::Numerical(
                        "line search stalled while centering".into(),
                    ))
                }
            }
        }
        first_centering = false;
        if degree / s <= opts.tolerance * p.t.abs().max(1.0) {
            break;
        }
        s *= GROWTH;
    }
    Ok((p.y, p.t))
}
