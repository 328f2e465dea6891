use ndarray::{Array2, ArrayView2};
use ndarray_linalg::{Cholesky, Diag, SolveTriangular, UPLO};

use crate::{Error, Result};

/// Relative residual of a solved system: `‖A X − B‖_F / ‖B‖_F`.
///
/// Falls back to the absolute residual when `B` is zero.
pub(crate) fn relative_residual(a: &ArrayView2<f64>, x: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
    let r = a.dot(x) - b;
    let num = frobenius(&r.view());
    let den = frobenius(b);
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

pub(crate) fn frobenius(a: &ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Solves `A X = B` for symmetric positive definite `A` via Cholesky.
///
/// One step of iterative refinement is applied when the first pass leaves a
/// relative residual above `1e-10`. Returns the solution and its relative
/// residual.
pub(crate) fn solve_spd(a: &Array2<f64>, b: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "system matrix {:?} with right-hand side {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite entries in linear system".into()));
    }
    let lower = a.cholesky(UPLO::Lower).map_err(|_| Error::Singular {
        class: None,
        hint: "system matrix is not positive definite; use lambda > 0".into(),
    })?;
    let solve = |rhs: &Array2<f64>| -> Result<Array2<f64>> {
        let y = lower
            .solve_triangular(UPLO::Lower, Diag::NonUnit, rhs)
            .map_err(|e| Error::Singular {
                class: None,
                hint: e.to_string(),
            })?;
        lower
            .t()
            .solve_triangular(UPLO::Upper, Diag::NonUnit, &y)
            .map_err(|e| Error::Singular {
                class: None,
                hint: e.to_string(),
            })
    };
    let mut x = solve(b)?;
    let mut residual = relative_residual(&a.view(), &x.view(), &b.view());
    if residual > 1e-10 {
        let correction = solve(&(b - &a.dot(&x)))?;
        x += &correction;
        residual = relative_residual(&a.view(), &x.view(), &b.view());
    }
    if !residual.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular {
            class: None,
            hint: "solution is not finite; use lambda > 0".into(),
        });
    }
    Ok((x, residual))
}

/// Symmetrizes in place by averaging with the transpose.
pub(crate) fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_small_spd_system() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let b = array![[1.0, 0.0], [2.0, 1.0]];
        let (x, res) = solve_spd(&a, &b).unwrap();
        assert!(res < 1e-14);
        let back = a.dot(&x);
        for (u, v) in back.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_system_is_reported() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let b = Array2::eye(2);
        assert!(matches!(solve_spd(&a, &b), Err(Error::Singular { .. })));
    }
}
