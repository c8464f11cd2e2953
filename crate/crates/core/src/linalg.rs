//! Small dense kernels generic over the scalar type: Cholesky factorization
//! and solves for symmetric positive-definite systems (ridge normal matrix,
//! innovation covariance), plus covariance symmetrization.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky<F: Real>(a: &Array2<F>) -> Result<Array2<F>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut l = Array2::<F>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(s > F::zero()) || !s.is_finite() {
                    return Err(Error::SingularSystem(format!(
                        "non-positive pivot {s} at row {i}"
                    )));
                }
                l[(i, j)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solves A X = B for SPD A given its lower Cholesky factor L.
pub fn chol_solve<F: Real>(l: &Array2<F>, b: &Array2<F>) -> Array2<F> {
    let n = l.nrows();
    let k = b.ncols();
    let mut x = b.clone();
    for col in 0..k {
        // L y = b
        for i in 0..n {
            let mut s = x[(i, col)];
            for j in 0..i {
                s -= l[(i, j)] * x[(j, col)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
        // L' x = y
        for i in (0..n).rev() {
            let mut s = x[(i, col)];
            for j in i + 1..n {
                s -= l[(j, i)] * x[(j, col)];
            }
            x[(i, col)] = s / l[(i, i)];
        }
    }
    x
}

/// One-shot SPD solve A X = B.
pub fn solve_spd<F: Real>(a: &Array2<F>, b: &Array2<F>) -> Result<Array2<F>> {
    Ok(chol_solve(&cholesky(a)?, b))
}

/// SPD solve with a vector right-hand side.
pub fn solve_spd_vec<F: Real>(a: &Array2<F>, b: &Array1<F>) -> Result<Array1<F>> {
    let bm = b
        .view()
        .into_shape_with_order((b.len(), 1))
        .expect("vector reshapes to column");
    let x = solve_spd(a, &bm.to_owned())?;
    Ok(x.column(0).to_owned())
}

/// P <- (P + P')/2, bounding drift from floating-point asymmetry.
pub fn symmetrize<F: Real>(p: &mut Array2<F>) {
    let half = F::of(0.5);
    let n = p.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = (p[(i, j)] + p[(j, i)]) * half;
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}
