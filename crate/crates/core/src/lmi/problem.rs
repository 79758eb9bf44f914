//! Affine matrix-inequality feasibility problems over matrix-valued unknowns.
//!
//! Constraints are written as sums of terms `L X R` or `L Xᵀ R` plus a
//! constant. A problem is solved by maximizing a common margin `t` such that
//! every `≻ 0` constraint satisfies `F ⪰ t I` and every `≺ 0` constraint
//! satisfies `F ⪯ -t I`, subject to the equalities.

use nalgebra::{DMatrix, DVector};

use super::barrier::{self, MarginBlock};
use crate::error::{Error, Result};
use crate::linalg;

/// Handle to an unknown matrix block of a [`FeasibilityProblem`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
struct VarSpec {
    rows: usize,
    cols: usize,
    symmetric: bool,
    offset: usize,
}

impl VarSpec {
    fn len(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    /// Entries `(a, b)` of the basis element paired with each scalar unknown.
    /// For symmetric blocks only the upper triangle is parameterized.
    fn entries(&self) -> Vec<(usize, usize)> {
        if self.symmetric {
            (0..self.rows)
                .flat_map(|b| (0..=b).map(move |a| (a, b)))
                .collect()
        } else {
            (0..self.cols)
                .flat_map(|b| (0..self.rows).map(move |a| (a, b)))
                .collect()
        }
    }
}

#[derive(Debug, Clone)]
struct Term {
    left: DMatrix<f64>,
    var: VarId,
    right: DMatrix<f64>,
    transposed: bool,
}

/// `C + Σ L_k X_k R_k` (or `L_k X_kᵀ R_k`).
#[derive(Debug, Clone)]
pub struct AffineExpr {
    rows: usize,
    cols: usize,
    constant: DMatrix<f64>,
    terms: Vec<Term>,
}

impl AffineExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            constant: DMatrix::zeros(rows, cols),
            terms: Vec::new(),
        }
    }

    pub fn from_constant(constant: DMatrix<f64>) -> Self {
        let (rows, cols) = constant.shape();
        Self {
            rows,
            cols,
            constant,
            terms: Vec::new(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Adds `left · X · right`.
    pub fn term(mut self, left: DMatrix<f64>, var: VarId, right: DMatrix<f64>) -> Self {
        self.terms.push(Term {
            left,
            var,
            right,
            transposed: false,
        });
        self
    }

    /// Adds `left · Xᵀ · right`.
    pub fn term_t(mut self, left: DMatrix<f64>, var: VarId, right: DMatrix<f64>) -> Self {
        self.terms.push(Term {
            left,
            var,
            right,
            transposed: true,
        });
        self
    }

    pub fn plus_constant(mut self, c: &DMatrix<f64>) -> Self {
        self.constant += c;
        self
    }
}

/// Direction of a strict matrix inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    PositiveDefinite,
    NegativeDefinite,
}

impl Sense {
    fn sign(self) -> f64 {
        match self {
            Sense::PositiveDefinite => 1.0,
            Sense::NegativeDefinite => -1.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FeasibilityProblem {
    vars: Vec<VarSpec>,
    lmis: Vec<(AffineExpr, Sense)>,
    equalities: Vec<AffineExpr>,
    dim: usize,
}

/// Tuning of the margin-maximization backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Radius of the Euclidean ball that keeps homogeneous programs bounded.
    pub norm_bound: f64,
    /// Smallest margin accepted as a feasibility certificate.
    pub feasibility_threshold: f64,
    /// Relative accuracy of the optimal margin.
    pub tolerance: f64,
    pub max_newton_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            norm_bound: 10.0,
            feasibility_threshold: 1e-6,
            tolerance: 1e-9,
            max_newton_steps: 2000,
        }
    }
}

/// Values of every unknown block at the returned point.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    values: Vec<DMatrix<f64>>,
    /// Smallest eigenvalue margin over all matrix inequalities.
    pub margin: f64,
    /// Largest absolute entry of any equality residual.
    pub equality_residual: f64,
}

impl Assignment {
    pub fn value(&self, var: VarId) -> &DMatrix<f64> {
        &self.values[var.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeasibilityOutcome {
    Feasible(Assignment),
    /// The best margin found fell below the threshold.
    Infeasible {
        margin: f64,
    },
}

impl FeasibilityOutcome {
    pub fn margin(&self) -> f64 {
        match self {
            FeasibilityOutcome::Feasible(a) => a.margin,
            FeasibilityOutcome::Infeasible { margin } => *margin,
        }
    }

    pub fn into_assignment(self) -> Result<Assignment> {
        match self {
            FeasibilityOutcome::Feasible(a) => Ok(a),
            FeasibilityOutcome::Infeasible { margin } => Err(Error::Infeasible { margin }),
        }
    }
}

impl FeasibilityProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, rows: usize, cols: usize) -> VarId {
        self.push_var(VarSpec {
            rows,
            cols,
            symmetric: false,
            offset: self.dim,
        })
    }

    pub fn add_sym_var(&mut self, n: usize) -> VarId {
        self.push_var(VarSpec {
            rows: n,
            cols: n,
            symmetric: true,
            offset: self.dim,
        })
    }

    fn push_var(&mut self, var: VarSpec) -> VarId {
        self.dim += var.len();
        self.vars.push(var);
        VarId(self.vars.len() - 1)
    }

    pub fn var_shape(&self, var: VarId) -> (usize, usize) {
        let v = &self.vars[var.0];
        (v.rows, v.cols)
    }

    /// Expression consisting of the unknown itself.
    pub fn var_expr(&self, var: VarId) -> AffineExpr {
        let (r, c) = self.var_shape(var);
        AffineExpr::zeros(r, c).term(DMatrix::identity(r, r), var, DMatrix::identity(c, c))
    }

    /// Number of scalar unknowns.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Requires `expr ≻ 0` or `expr ≺ 0`. Strict definiteness is understood
    /// for symmetric matrices, so the skew part of `expr` is constrained to 0.
    pub fn add_lmi(&mut self, expr: AffineExpr, sense: Sense) -> Result<()> {
        self.check_expr(&expr)?;
        if expr.rows != expr.cols {
            return Err(Error::Dimension(format!(
                "matrix inequality needs a square expression, got {}x{}",
                expr.rows, expr.cols
            )));
        }
        self.lmis.push((expr, sense));
        Ok(())
    }

    /// Requires `expr = 0`.
    pub fn add_equality(&mut self, expr: AffineExpr) -> Result<()> {
        self.check_expr(&expr)?;
        self.equalities.push(expr);
        Ok(())
    }

    fn check_expr(&self, expr: &AffineExpr) -> Result<()> {
        if expr.constant.shape() != (expr.rows, expr.cols) {
            return Err(Error::Dimension(
                "constant does not match expression shape".into(),
            ));
        }
        for term in &expr.terms {
            let v = self
                .vars
                .get(term.var.0)
                .ok_or_else(|| Error::InvalidArgument("unknown variable handle".into()))?;
            let (vr, vc) = if term.transposed {
                (v.cols, v.rows)
            } else {
                (v.rows, v.cols)
            };
            if term.left.shape() != (expr.rows, vr) || term.right.shape() != (vc, expr.cols) {
                return Err(Error::Dimension(format!(
                    "term {}x{} · [{vr}x{vc}] · {}x{} does not produce {}x{}",
                    term.left.nrows(),
                    term.left.ncols(),
                    term.right.nrows(),
                    term.right.ncols(),
                    expr.rows,
                    expr.cols
                )));
            }
        }
        Ok(())
    }

    /// Column-major `vec(expr(z)) = map · z + offset`.
    fn linear_map(&self, expr: &AffineExpr) -> (DMatrix<f64>, DVector<f64>) {
        let rows = expr.rows * expr.cols;
        let mut map = DMatrix::zeros(rows, self.dim);
        for term in &expr.terms {
            let v = &self.vars[term.var.0];
            for (idx, (a, b)) in v.entries().into_iter().enumerate() {
                let col = v.offset + idx;
                let mut add = |p: usize, q: usize| {
                    // left · E_pq · right = left[:, p] right[q, :]
                    let (lp, rq) = if term.transposed { (q, p) } else { (p, q) };
                    let lcol = term.left.column(lp);
                    let rrow = term.right.row(rq);
                    if lcol.iter().all(|x| *x == 0.0) || rrow.iter().all(|x| *x == 0.0) {
                        return;
                    }
                    for c in 0..expr.cols {
                        let rc = rrow[c];
                        if rc == 0.0 {
                            continue;
                        }
                        for r in 0..expr.rows {
                            map[(r + c * expr.rows, col)] += lcol[r] * rc;
                        }
                    }
                };
                add(a, b);
                if v.symmetric && a != b {
                    add(b, a);
                }
            }
        }
        let offset = DVector::from_column_slice(expr.constant.as_slice());
        (map, offset)
    }

    fn unpack(&self, z: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.vars
            .iter()
            .map(|v| {
                let mut m = DMatrix::zeros(v.rows, v.cols);
                for (idx, (a, b)) in v.entries().into_iter().enumerate() {
                    m[(a, b)] = z[v.offset + idx];
                    if v.symmetric {
                        m[(b, a)] = z[v.offset + idx];
                    }
                }
                m
            })
            .collect()
    }

    /// Evaluates `expr` at the given variable values.
    pub fn evaluate(&self, expr: &AffineExpr, values: &Assignment) -> DMatrix<f64> {
        let mut out = expr.constant.clone();
        for t in &expr.terms {
            let x = values.value(t.var);
            if t.transposed {
                out += &t.left * x.transpose() * &t.right;
            } else {
                out += &t.left * x * &t.right;
            }
        }
        out
    }

    /// Margin maximization; see the module documentation.
    pub fn solve(&self, opts: &SolverOptions) -> Result<FeasibilityOutcome> {
        let d = self.dim;

        // Equalities, including the skew parts of the matrix inequalities.
        let mut eq_rows: Vec<DVector<f64>> = Vec::new();
        let mut eq_rhs: Vec<f64> = Vec::new();
        for expr in &self.equalities {
            let (map, off) = self.linear_map(expr);
            for r in 0..map.nrows() {
                eq_rows.push(map.row(r).transpose());
                eq_rhs.push(-off[r]);
            }
        }
        let mut lmi_maps = Vec::with_capacity(self.lmis.len());
        for (expr, sense) in &self.lmis {
            let (map, off) = self.linear_map(expr);
            let b = expr.rows;
            for j in 0..b {
                for i in 0..j {
                    let row = map.row(i + j * b) - map.row(j + i * b);
                    let rhs = off[j + i * b] - off[i + j * b];
                    if row.iter().any(|v| *v != 0.0) || rhs != 0.0 {
                        eq_rows.push(row.transpose());
                        eq_rhs.push(rhs);
                    }
                }
            }
            // symmetric part, oriented so that the constraint reads F ⪰ t I
            let mut sym_map = DMatrix::zeros(b * b, d);
            let mut sym_off = DVector::zeros(b * b);
            for j in 0..b {
                for i in 0..b {
                    let (ij, ji) = (i + j * b, j + i * b);
                    sym_map.set_row(ij, &((map.row(ij) + map.row(ji)) * (0.5 * sense.sign())));
                    sym_off[ij] = 0.5 * sense.sign() * (off[ij] + off[ji]);
                }
            }
            lmi_maps.push((b, sym_map, sym_off));
        }

        // Particular solution and row space of the equality system.
        let (z0, row_space) = if eq_rows.is_empty() {
            (DVector::zeros(d), DMatrix::zeros(d, 0))
        } else {
            let e = DMatrix::from_fn(eq_rows.len(), d, |r, c| eq_rows[r][c]);
            let f = DVector::from_vec(eq_rhs);
            let svd = linalg::svd(&e);
            let smax = svd.singular_values.max();
            let keep: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&k| svd.singular_values[k] > 1e-11 * smax)
                .collect();
            let u = svd.u.as_ref().expect("u computed");
            let vt = svd.v_t.as_ref().expect("v_t computed");
            let mut z0 = DVector::zeros(d);
            let mut basis = DMatrix::zeros(d, keep.len());
            for (col, &k) in keep.iter().enumerate() {
                let v = vt.row(k).transpose();
                z0 += &v * (u.column(k).dot(&f) / svd.singular_values[k]);
                basis.set_column(col, &v);
            }
            let residual = (&e * &z0 - &f).norm();
            if residual > 1e-9 * (1.0 + f.norm()) {
                return Ok(FeasibilityOutcome::Infeasible {
                    margin: f64::NEG_INFINITY,
                });
            }
            (z0, basis)
        };

        if lmi_maps.is_empty() {
            let values = self.unpack(&z0);
            let assignment = Assignment {
                values,
                margin: f64::INFINITY,
                equality_residual: 0.0,
            };
            let residual = self.equality_residual(&assignment);
            return Ok(FeasibilityOutcome::Feasible(Assignment {
                equality_residual: residual,
                ..assignment
            }));
        }

        // Directions inside the equality null space that move some inequality.
        let phi = {
            let blocks: Vec<&DMatrix<f64>> = lmi_maps.iter().map(|(_, m, _)| m).collect();
            linalg::vstack(&blocks)
        };
        let projected = if row_space.ncols() > 0 {
            &phi - (&phi * &row_space) * row_space.transpose()
        } else {
            phi
        };
        let free = if projected.amax() == 0.0 {
            DMatrix::zeros(d, 0)
        } else {
            let svd = linalg::svd(&projected);
            let smax = svd.singular_values.max();
            let vt = svd.v_t.as_ref().expect("v_t computed");
            let keep: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&k| svd.singular_values[k] > 1e-10 * smax)
                .collect();
            DMatrix::from_fn(d, keep.len(), |r, c| vt[(keep[c], r)])
        };

        let blocks: Vec<MarginBlock> = lmi_maps
            .iter()
            .map(|(b, map, off)| {
                let b = *b;
                let c = map * &z0 + off;
                let dirs = map * &free;
                MarginBlock {
                    constant: DMatrix::from_column_slice(b, b, c.as_slice()),
                    basis: (0..free.ncols())
                        .map(|j| DMatrix::from_column_slice(b, b, dirs.column(j).as_slice()))
                        .collect(),
                }
            })
            .collect();

        let (y, _) = barrier::maximize_margin(&blocks, free.ncols(), opts)?;
        let z = &z0 + &free * &y;
        let values = self.unpack(&z);

        // Report the margin at the assembled point rather than the barrier iterate.
        let mut assignment = Assignment {
            values,
            margin: f64::INFINITY,
            equality_residual: 0.0,
        };
        for (expr, sense) in &self.lmis {
            let f = self.evaluate(expr, &assignment) * sense.sign();
            assignment.margin = assignment.margin.min(linalg::min_sym_eigenvalue(&f));
        }
        assignment.equality_residual = self.equality_residual(&assignment);
        if !assignment.margin.is_finite() {
            return Err(Error::Numerical(
                "non-finite margin at the returned point".into(),
            ));
        }
        if assignment.margin >= opts.feasibility_threshold {
            Ok(FeasibilityOutcome::Feasible(assignment))
        } else {
            Ok(FeasibilityOutcome::Infeasible {
                margin: assignment.margin,
            })
        }
    }

    fn equality_residual(&self, values: &Assignment) -> f64 {
        let mut worst: f64 = 0.0;
        for expr in &self.equalities {
            worst = worst.max(self.evaluate(expr, values).amax());
        }
        for (expr, _) in &self.lmis {
            let f = self.evaluate(expr, values);
            worst = worst.max((&f - f.transpose()).amax());
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn pinned_scalar_has_unit_margin() {
        let mut p = FeasibilityProblem::new();
        let x = p.add_var(1, 1);
        p.add_lmi(p.var_expr(x), Sense::PositiveDefinite).unwrap();
        p.add_equality(p.var_expr(x).plus_constant(&scalar(-1.0)))
            .unwrap();
        let a = p
            .solve(&SolverOptions::default())
            .unwrap()
            .into_assignment()
            .unwrap();
        assert!((a.value(x)[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((a.margin - 1.0).abs() < 1e-9);
    }

    #[test]
    fn contradictory_signs_are_infeasible() {
        let mut p = FeasibilityProblem::new();
        let x = p.add_var(1, 1);
        p.add_lmi(p.var_expr(x), Sense::PositiveDefinite).unwrap();
        p.add_lmi(p.var_expr(x), Sense::NegativeDefinite).unwrap();
        match p.solve(&SolverOptions::default()).unwrap() {
            FeasibilityOutcome::Infeasible { margin } => assert!(margin <= 0.0),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let mut p = FeasibilityProblem::new();
        let x = p.add_var(1, 1);
        p.add_equality(p.var_expr(x).plus_constant(&scalar(-1.0)))
            .unwrap();
        p.add_equality(p.var_expr(x).plus_constant(&scalar(-2.0)))
            .unwrap();
        p.add_lmi(p.var_expr(x), Sense::PositiveDefinite).unwrap();
        let out = p.solve(&SolverOptions::default()).unwrap();
        assert_eq!(out.margin(), f64::NEG_INFINITY);
    }

    #[test]
    fn lyapunov_inequality_for_stable_matrix() {
        // find X ≻ 0 with A X + X Aᵀ ≺ 0
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 3.0, 0.0, -2.0]);
        let mut p = FeasibilityProblem::new();
        let x = p.add_sym_var(2);
        p.add_lmi(p.var_expr(x), Sense::PositiveDefinite).unwrap();
        let lyap = AffineExpr::zeros(2, 2)
            .term(a.clone(), x, DMatrix::identity(2, 2))
            .term(DMatrix::identity(2, 2), x, a.transpose());
        p.add_lmi(lyap.clone(), Sense::NegativeDefinite).unwrap();
        let sol = p
            .solve(&SolverOptions::default())
            .unwrap()
            .into_assignment()
            .unwrap();
        let xv = sol.value(x);
        assert!(linalg::min_sym_eigenvalue(xv) >= sol.margin - 1e-12);
        assert!(linalg::max_sym_eigenvalue(&p.evaluate(&lyap, &sol)) <= -sol.margin + 1e-12);
        assert!(sol.margin > 1e-3);
    }

    #[test]
    fn unstable_matrix_admits_no_lyapunov_certificate() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let mut p = FeasibilityProblem::new();
        let x = p.add_sym_var(2);
        p.add_lmi(p.var_expr(x), Sense::PositiveDefinite).unwrap();
        let lyap = AffineExpr::zeros(2, 2)
            .term(a.clone(), x, DMatrix::identity(2, 2))
            .term(DMatrix::identity(2, 2), x, a.transpose());
        p.add_lmi(lyap, Sense::NegativeDefinite).unwrap();
        assert!(matches!(
            p.solve(&SolverOptions::default()).unwrap(),
            FeasibilityOutcome::Infeasible { .. }
        ));
    }

    #[test]
    fn non_symmetric_expression_is_forced_symmetric() {
        // X full 2x2 with X ≻ 0: the solver must return a symmetric X
        let mut p = FeasibilityProblem::new();
        let x = p.add_var(2, 2);
        p.add_lmi(p.var_expr(x), Sense::PositiveDefinite).unwrap();
        let sol = p
            .solve(&SolverOptions::default())
            .unwrap()
            .into_assignment()
            .unwrap();
        let xv = sol.value(x);
        assert!((xv - xv.transpose()).amax() < 1e-12);
        assert!(sol.equality_residual < 1e-12);
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let mut p = FeasibilityProblem::new();
        let x = p.add_var(2, 3);
        let bad = AffineExpr::zeros(2, 2).term(DMatrix::identity(2, 2), x, DMatrix::identity(2, 2));
        assert!(p.add_lmi(bad, Sense::PositiveDefinite).is_err());
        assert!(p.add_lmi(p.var_expr(x), Sense::PositiveDefinite).is_err());
    }

    #[test]
    fn solve_is_deterministic() {
        let build = || {
            let mut p = FeasibilityProblem::new();
            let x = p.add_sym_var(3);
            let a =
                DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, -2.0, -3.0]);
            p.add_lmi(p.var_expr(x), Sense::PositiveDefinite).unwrap();
            p.add_lmi(
                AffineExpr::zeros(3, 3)
                    .term(a.clone(), x, DMatrix::identity(3, 3))
                    .term(DMatrix::identity(3, 3), x, a.transpose()),
                Sense::NegativeDefinite,
            )
            .unwrap();
            p.solve(&SolverOptions::default()).unwrap()
        };
        assert_eq!(build(), build());
    }
}
