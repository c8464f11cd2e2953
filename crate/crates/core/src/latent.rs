//! Rank-r PCA latent space: mean field, projection, reconstruction.
//!
//! Bases are fitted on log10-density snapshots so the downstream
//! log-density observation operator stays affine in the latent state.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{Eigh, UPLO};

use crate::error::{Error, Result};
use crate::grid_obs::GridSpec;
use crate::scalar::{LapackReal, Real};

/// Default retained rank.
pub const DEFAULT_RANK: usize = 10;

// Eigenvalues below this fraction of the leading one are treated as rank
// deficiency for the requested r.
const RANK_TOL: f64 = 1e-12;

/// PCA basis: d x r projection matrix with orthonormal columns, mean field,
/// and training metadata.
#[derive(Debug, Clone)]
pub struct LatentBasis<F: Real> {
    pub w: Array2<F>,
    pub mu0: Array1<F>,
    pub r: usize,
    pub grid: GridSpec<F>,
    /// Training snapshot count.
    pub m: usize,
    /// Per-mode explained-variance fractions, non-increasing.
    pub explained: Vec<F>,
}

impl<F: Real> LatentBasis<F> {
    /// z = W' (x - mu0).
    pub fn project(&self, x: ArrayView1<'_, F>) -> Result<Array1<F>> {
        if x.len() != self.w.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "field has {} values, basis wants {}",
                x.len(),
                self.w.nrows()
            )));
        }
        let centered = &x - &self.mu0;
        Ok(self.w.t().dot(&centered))
    }

    /// x_hat = W z + mu0.
    pub fn reconstruct(&self, z: ArrayView1<'_, F>) -> Result<Array1<F>> {
        if z.len() != self.r {
            return Err(Error::DimensionMismatch(format!(
                "latent state has {} components, basis wants {}",
                z.len(),
                self.r
            )));
        }
        Ok(self.w.dot(&z) + &self.mu0)
    }

    /// Projects a d x m snapshot matrix to r x m latent coordinates.
    pub fn project_series(&self, snapshots: ArrayView2<'_, F>) -> Result<Array2<F>> {
        if snapshots.nrows() != self.w.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "snapshots have {} rows, basis wants {}",
                snapshots.nrows(),
                self.w.nrows()
            )));
        }
        let mut centered = snapshots.to_owned();
        for mut col in centered.axis_iter_mut(Axis(1)) {
            col -= &self.mu0;
        }
        Ok(self.w.t().dot(&centered))
    }
}

/// Fits the rank-r basis from a d x m snapshot matrix via the m x m Gram
/// eigendecomposition (economy SVD for d >> m), then re-orthonormalizes the
/// lifted singular vectors with one modified Gram-Schmidt sweep.
pub fn fit_basis<F: LapackReal>(
    snapshots: ArrayView2<'_, F>,
    r: usize,
    grid: GridSpec<F>,
) -> Result<LatentBasis<F>> {
    let (d, m) = snapshots.dim();
    if d != grid.d() {
        return Err(Error::DimensionMismatch(format!(
            "snapshots have {} rows, grid wants d = {}",
            d,
            grid.d()
        )));
    }
    if r < 1 || m < 1 {
        return Err(Error::InsufficientData(format!(
            "basis fit needs r >= 1 and m >= 1, got r = {r}, m = {m}"
        )));
    }
    if r > d.min(m) {
        return Err(Error::RankTooLarge { r, max: d.min(m) });
    }
    if snapshots.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training snapshots".into()));
    }

    let mu0 = snapshots
        .mean_axis(Axis(1))
        .expect("m >= 1 checked above");
    let mut centered = snapshots.to_owned();
    for mut col in centered.axis_iter_mut(Axis(1)) {
        col -= &mu0;
    }

    let gram = centered.t().dot(&centered);
    let (vals, vecs) = gram
        .eigh(UPLO::Lower)
        .map_err(|e| Error::DegenerateData(format!("Gram eigendecomposition failed: {e}")))?;
    // eigh returns ascending order; total energy is the Gram trace.
    let total: F = vals.iter().copied().filter(|v| *v > F::zero()).sum();
    if !(total > F::zero()) {
        return Err(Error::DegenerateData("snapshots have zero variance".into()));
    }
    let lead = vals[m - 1];
    let rank_floor = lead * F::of(RANK_TOL);

    let mut w = Array2::<F>::zeros((d, r));
    let mut explained = Vec::with_capacity(r);
    for i in 0..r {
        let lam = vals[m - 1 - i];
        if !(lam > rank_floor) {
            return Err(Error::DegenerateData(format!(
                "mode {i} carries no variance (eigenvalue {lam} vs leading {lead}); \
                 lower the requested rank"
            )));
        }
        let col = centered.dot(&vecs.column(m - 1 - i)) / num_traits::Float::sqrt(lam);
        w.column_mut(i).assign(&col);
        explained.push(lam / total);
    }

    // One MGS sweep keeps ||W'W - I|| at machine precision even when the
    // trailing eigenvalues are small relative to the leading one.
    for i in 0..r {
        for k in 0..i {
            let proj = w.column(k).dot(&w.column(i));
            let wk = w.column(k).to_owned();
            w.column_mut(i).scaled_add(-proj, &wk);
        }
        let norm = num_traits::Float::sqrt(w.column(i).dot(&w.column(i)));
        if !(norm > F::zero()) || !norm.is_finite() {
            return Err(Error::DegenerateData(format!("mode {i} collapsed during orthonormalization")));
        }
        w.column_mut(i).mapv_inplace(|v| v / norm);
    }

    Ok(LatentBasis { w, mu0, r, grid, m, explained })
}
