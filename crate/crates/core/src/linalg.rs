//! Small dense linear-algebra helpers shared by the data and design modules.

use nalgebra::{Complex, DMatrix, DVector, Dyn, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Relative singular-value threshold used for every rank decision on data.
pub const RANK_TOL: f64 = 1e-8;

/// Full SVD with a reconstruction check. The default convergence test of the
/// bidiagonal iteration occasionally stops on an inaccurate decomposition, so
/// tighter tolerances and the transpose are tried until the factors reproduce
/// the input.
pub fn svd(m: &DMatrix<f64>) -> SVD<f64, Dyn, Dyn> {
    let tol = 1e-12 * (1.0 + m.norm()) * (m.nrows().max(m.ncols()).max(1) as f64);
    let error = |s: &SVD<f64, Dyn, Dyn>, target: &DMatrix<f64>| match (&s.u, &s.v_t) {
        (Some(u), Some(vt)) => {
            (u * DMatrix::from_diagonal(&s.singular_values) * vt - target).norm()
        }
        _ => f64::INFINITY,
    };
    let first = SVD::new(m.clone(), true, true);
    let mut best_error = error(&first, m);
    if best_error <= tol {
        return first;
    }
    let mut best = first;
    if let Some(tight) = m.clone().try_svd(true, true, 1e-20, 0) {
        let e = error(&tight, m);
        if e < best_error {
            (best, best_error) = (tight, e);
        }
    }
    if best_error > tol {
        let t = m.transpose();
        let flipped = SVD::new(t.clone(), true, true);
        let e = error(&flipped, &t);
        if e < best_error {
            best = SVD {
                u: flipped.v_t.map(|vt| vt.transpose()),
                v_t: flipped.u.map(|u| u.transpose()),
                singular_values: flipped.singular_values,
            };
        }
    }
    best
}

/// Singular values computed through [`svd`].
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    svd(m).singular_values
}

/// Numerical rank with a threshold relative to the largest singular value.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = singular_values(m);
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Minimum-norm least-squares solution of `a x = b`, discarding singular
/// values below `rel_tol * sigma_max`.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DMatrix::zeros(a.ncols(), b.ncols());
    }
    let svd = svd(a);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DMatrix::zeros(a.ncols(), b.ncols());
    }
    svd.solve(b, rel_tol * smax)
        .expect("SVD computed with both U and V")
}

/// Vector form of [`min_norm_solve`].
pub fn min_norm_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let x = min_norm_solve(
        a,
        &DMatrix::from_column_slice(b.len(), 1, b.as_slice()),
        rel_tol,
    );
    x.column(0).into_owned()
}

/// Inverse through the SVD, refusing matrices whose 2-norm condition number
/// exceeds `max_cond`. Returns the inverse together with the condition number.
pub fn inverse_checked(m: &DMatrix<f64>, max_cond: f64) -> Result<(DMatrix<f64>, f64)> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "cannot invert a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok((DMatrix::zeros(0, 0), 1.0));
    }
    let sv = singular_values(m);
    let (smax, smin) = (sv.max(), sv.min());
    let cond = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !cond.is_finite() || cond > max_cond {
        return Err(Error::Numerical(format!(
            "matrix condition number {cond:e} exceeds {max_cond:e}"
        )));
    }
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular matrix".into()))?;
    Ok((inv, cond))
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m)
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

pub fn max_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.max()
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Stack matrices with equal column counts on top of each other.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}
