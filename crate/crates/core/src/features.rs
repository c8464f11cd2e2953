//! Polynomial candidate library Theta(z, u): degree-2 term enumeration,
//! per-term standardization, and the analytical Jacobian with respect to z.
//!
//! Lagged states and drivers never enter the library; memory is handled by
//! explicit lag operators in the identified model.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Real;

// Training standard deviations below this freeze a term: its standardized
// feature is pinned to zero and its coefficient is forced to zero.
pub const STD_FLOOR: f64 = 1e-12;

/// One candidate term. Indices are 0-based into z and u.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Bias,
    Z(usize),
    /// z_i * z_j with i <= j.
    ZZ(usize, usize),
    U(usize),
    /// u_k * u_l with k <= l.
    UU(usize, usize),
    /// z_i * u_k.
    ZU(usize, usize),
}

impl Term {
    pub fn is_linear_or_bias(&self) -> bool {
        matches!(self, Term::Bias | Term::Z(_) | Term::U(_))
    }
}

/// Ordered term list for state dimension r and driver dimension n_u.
///
/// The canonical full enumeration is: 1; z_i; z_i z_j (i <= j, i outer);
/// u_k; u_k u_l (k <= l, k outer); z_i u_k (i outer). The order is stable
/// across runs and is what persisted coefficient columns refer to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LibrarySpec {
    pub r: usize,
    pub n_u: usize,
    pub terms: Vec<Term>,
}

/// Full degree-2 library; term count is
/// 1 + r + r(r+1)/2 + n_u + n_u(n_u+1)/2 + r n_u.
pub fn enumerate_terms(r: usize, n_u: usize) -> LibrarySpec {
    let mut terms = Vec::with_capacity(1 + r + r * (r + 1) / 2 + n_u + n_u * (n_u + 1) / 2 + r * n_u);
    terms.push(Term::Bias);
    for i in 0..r {
        terms.push(Term::Z(i));
    }
    for i in 0..r {
        for j in i..r {
            terms.push(Term::ZZ(i, j));
        }
    }
    for k in 0..n_u {
        terms.push(Term::U(k));
    }
    for k in 0..n_u {
        for l in k..n_u {
            terms.push(Term::UU(k, l));
        }
    }
    for i in 0..r {
        for k in 0..n_u {
            terms.push(Term::ZU(i, k));
        }
    }
    LibrarySpec { r, n_u, terms }
}

impl LibrarySpec {
    /// Full degree-2 library (see [`enumerate_terms`]).
    pub fn full(r: usize, n_u: usize) -> Self {
        enumerate_terms(r, n_u)
    }

    /// Bias and linear terms only: 1, z_i, u_k.
    pub fn linear(r: usize, n_u: usize) -> Self {
        let full = enumerate_terms(r, n_u);
        LibrarySpec {
            r,
            n_u,
            terms: full.terms.into_iter().filter(Term::is_linear_or_bias).collect(),
        }
    }

    /// Genuinely nonlinear terms only (quadratic and cross), in the canonical
    /// order; this is the block the identified sparse coefficients cover.
    pub fn nonlinear_only(r: usize, n_u: usize) -> Self {
        let full = enumerate_terms(r, n_u);
        LibrarySpec {
            r,
            n_u,
            terms: full.terms.into_iter().filter(|t| !t.is_linear_or_bias()).collect(),
        }
    }

    /// Empty library (no candidate terms), used by the linear baseline model.
    pub fn empty(r: usize, n_u: usize) -> Self {
        LibrarySpec { r, n_u, terms: Vec::new() }
    }

    /// Term count p.
    pub fn p(&self) -> usize {
        self.terms.len()
    }
}

/// Per-term training mean and standard deviation. Frozen terms (training std
/// below [`STD_FLOOR`]) evaluate to exactly zero.
#[derive(Debug, Clone)]
pub struct FeatureScaler<F: Real> {
    pub mean: Array1<F>,
    pub std: Array1<F>,
    pub frozen: Vec<bool>,
}

impl<F: Real> FeatureScaler<F> {
    /// Pass-through scaler: mean 0, std 1, nothing frozen.
    pub fn identity(p: usize) -> Self {
        FeatureScaler {
            mean: Array1::zeros(p),
            std: Array1::ones(p),
            frozen: vec![false; p],
        }
    }

    /// Fits per-term statistics from a p x m raw feature matrix. The bias
    /// term keeps mean 0 and std 1 so it survives as a constant offset.
    pub fn fit(spec: &LibrarySpec, raw: ArrayView2<'_, F>) -> Result<Self> {
        if raw.nrows() != spec.p() {
            return Err(Error::DimensionMismatch(format!(
                "feature matrix has {} rows, library wants {}",
                raw.nrows(),
                spec.p()
            )));
        }
        let (mean, std, frozen) = standardize_stats(raw);
        let mut scaler = FeatureScaler { mean, std, frozen };
        for (idx, term) in spec.terms.iter().enumerate() {
            if *term == Term::Bias {
                scaler.mean[idx] = F::zero();
                scaler.std[idx] = F::one();
                scaler.frozen[idx] = false;
            }
        }
        Ok(scaler)
    }

    /// Restricts the scaler to the given term indices (in order).
    pub fn subset(&self, indices: &[usize]) -> Self {
        FeatureScaler {
            mean: indices.iter().map(|&i| self.mean[i]).collect(),
            std: indices.iter().map(|&i| self.std[i]).collect(),
            frozen: indices.iter().map(|&i| self.frozen[i]).collect(),
        }
    }

    pub fn p(&self) -> usize {
        self.mean.len()
    }
}

/// Row-wise mean and sample standard deviation (ddof 1) with freeze flags
/// for rows whose std falls below [`STD_FLOOR`]. Frozen rows keep std 1 so
/// standardization maps them to exactly zero.
pub fn standardize_stats<F: Real>(rows: ArrayView2<'_, F>) -> (Array1<F>, Array1<F>, Vec<bool>) {
    let q = rows.nrows();
    let m = rows.ncols();
    let mut mean = Array1::<F>::zeros(q);
    let mut std = Array1::<F>::ones(q);
    let mut frozen = vec![true; q];
    if m == 0 {
        return (mean, std, frozen);
    }
    let floor = F::of(STD_FLOOR);
    for (i, row) in rows.axis_iter(Axis(0)).enumerate() {
        let mu = row.sum() / F::of(m as f64);
        mean[i] = mu;
        if m < 2 {
            continue; // no spread information: leave frozen
        }
        let ss: F = row.iter().map(|&v| (v - mu) * (v - mu)).sum();
        let sd = (ss / F::of((m - 1) as f64)).sqrt();
        if sd > floor {
            std[i] = sd;
            frozen[i] = false;
        }
    }
    (mean, std, frozen)
}

fn check_dims<F: Real>(spec: &LibrarySpec, z: ArrayView1<'_, F>, u: ArrayView1<'_, F>) -> Result<()> {
    if z.len() != spec.r || u.len() != spec.n_u {
        return Err(Error::DimensionMismatch(format!(
            "library wants r = {}, n_u = {}; got z of {} and u of {}",
            spec.r,
            spec.n_u,
            z.len(),
            u.len()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) || u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature inputs".into()));
    }
    Ok(())
}

/// Raw (unstandardized) term values at (z, u).
pub fn eval_raw<F: Real>(
    spec: &LibrarySpec,
    z: ArrayView1<'_, F>,
    u: ArrayView1<'_, F>,
) -> Result<Array1<F>> {
    check_dims(spec, z, u)?;
    let mut out = Array1::<F>::zeros(spec.p());
    for (idx, term) in spec.terms.iter().enumerate() {
        out[idx] = match *term {
            Term::Bias => F::one(),
            Term::Z(i) => z[i],
            Term::ZZ(i, j) => z[i] * z[j],
            Term::U(k) => u[k],
            Term::UU(k, l) => u[k] * u[l],
            Term::ZU(i, k) => z[i] * u[k],
        };
    }
    Ok(out)
}

/// Standardized feature vector phi_feat = (raw - mean) / std, with frozen
/// terms pinned to zero.
pub fn eval_features<F: Real>(
    spec: &LibrarySpec,
    scaler: &FeatureScaler<F>,
    z: ArrayView1<'_, F>,
    u: ArrayView1<'_, F>,
) -> Result<Array1<F>> {
    if scaler.p() != spec.p() {
        return Err(Error::DimensionMismatch(format!(
            "scaler covers {} terms, library has {}",
            scaler.p(),
            spec.p()
        )));
    }
    let mut out = eval_raw(spec, z, u)?;
    for idx in 0..out.len() {
        out[idx] = if scaler.frozen[idx] {
            F::zero()
        } else {
            (out[idx] - scaler.mean[idx]) / scaler.std[idx]
        };
    }
    Ok(out)
}

/// Analytical p x r Jacobian of the standardized feature vector with respect
/// to z. Driver-only and bias rows are zero; frozen rows are zero.
pub fn feature_jacobian<F: Real>(
    spec: &LibrarySpec,
    scaler: &FeatureScaler<F>,
    z: ArrayView1<'_, F>,
    u: ArrayView1<'_, F>,
) -> Result<Array2<F>> {
    if scaler.p() != spec.p() {
        return Err(Error::DimensionMismatch(format!(
            "scaler covers {} terms, library has {}",
            scaler.p(),
            spec.p()
        )));
    }
    check_dims(spec, z, u)?;
    let mut jac = Array2::<F>::zeros((spec.p(), spec.r));
    for (idx, term) in spec.terms.iter().enumerate() {
        if scaler.frozen[idx] {
            continue;
        }
        let sd = scaler.std[idx];
        match *term {
            Term::Bias | Term::U(_) | Term::UU(_, _) => {}
            Term::Z(i) => jac[(idx, i)] = F::one() / sd,
            Term::ZZ(i, j) => {
                // i == j accumulates to 2 z_i / std.
                jac[(idx, i)] += z[j] / sd;
                jac[(idx, j)] += z[i] / sd;
            }
            Term::ZU(i, k) => jac[(idx, i)] = u[k] / sd,
        }
    }
    Ok(jac)
}
