//! Gridded field domain: tri-linear interpolation on the (LT, LAT, ALT)
//! grid, the affine log-density observation operator, and Monte-Carlo
//! measurement-noise estimation.

use ndarray::{Array1, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::latent::LatentBasis;
use crate::rng::chacha_stream;
use crate::scalar::Real;

/// Default relative sensor error applied to linear density.
pub const DEFAULT_REL_ERR: f64 = 0.05;
/// Default Monte-Carlo sample count for the noise-variance estimate.
pub const DEFAULT_N_MC: usize = 100;

/// Uniform (LT, LAT, ALT) grid. Local time is periodic on [0, 24) h with
/// `n_lt` bins; latitude and altitude axes are inclusive with `n_lat` and
/// `n_alt` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec<F: Real> {
    pub n_lt: usize,
    pub n_lat: usize,
    pub n_alt: usize,
    pub lt_period: F,
    pub lat_min: F,
    pub lat_max: F,
    pub alt_min: F,
    pub alt_max: F,
}

impl<F: Real> Default for GridSpec<F> {
    /// Full-resolution grid: 72 LT bins, 36 latitudes over +-87.5 deg,
    /// 45 altitudes over 100..980 km.
    fn default() -> Self {
        Self::with_dims(72, 36, 45)
    }
}

impl<F: Real> GridSpec<F> {
    /// Grid with custom bin counts and the standard coordinate ranges.
    pub fn with_dims(n_lt: usize, n_lat: usize, n_alt: usize) -> Self {
        GridSpec {
            n_lt,
            n_lat,
            n_alt,
            lt_period: F::of(24.0),
            lat_min: F::of(-87.5),
            lat_max: F::of(87.5),
            alt_min: F::of(100.0),
            alt_max: F::of(980.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_lt < 2 || self.n_lat < 2 || self.n_alt < 2 {
            return Err(Error::InvalidValue(format!(
                "grid needs at least 2 samples per axis, got {}x{}x{}",
                self.n_lt, self.n_lat, self.n_alt
            )));
        }
        let ok = self.lt_period > F::zero()
            && self.lat_min < self.lat_max
            && self.alt_min < self.alt_max
            && self.lt_period.is_finite()
            && self.lat_min.is_finite()
            && self.lat_max.is_finite()
            && self.alt_min.is_finite()
            && self.alt_max.is_finite();
        if !ok {
            return Err(Error::InvalidValue("grid axis ranges must be finite and increasing".into()));
        }
        Ok(())
    }

    /// Flattened field length d.
    pub fn d(&self) -> usize {
        self.n_lt * self.n_lat * self.n_alt
    }

    /// Flattening order: LT-major, then LAT, then ALT.
    pub fn flat_index(&self, i_lt: usize, j_lat: usize, k_alt: usize) -> usize {
        (i_lt * self.n_lat + j_lat) * self.n_alt + k_alt
    }

    pub fn lt_step(&self) -> F {
        self.lt_period / F::of(self.n_lt as f64)
    }

    pub fn lat_step(&self) -> F {
        (self.lat_max - self.lat_min) / F::of((self.n_lat - 1) as f64)
    }

    pub fn alt_step(&self) -> F {
        (self.alt_max - self.alt_min) / F::of((self.n_alt - 1) as f64)
    }

    pub fn lt_at(&self, i: usize) -> F {
        F::of(i as f64) * self.lt_step()
    }

    pub fn lat_at(&self, j: usize) -> F {
        self.lat_min + F::of(j as f64) * self.lat_step()
    }

    pub fn alt_at(&self, k: usize) -> F {
        self.alt_min + F::of(k as f64) * self.alt_step()
    }
}

/// One gridded field state, flattened LT-major (see [`GridSpec::flat_index`]).
#[derive(Debug, Clone)]
pub struct FieldSnapshot<F: Real> {
    pub grid: GridSpec<F>,
    pub values: Array1<F>,
    /// Seconds since 2000-01-01T00:00:00 UTC.
    pub epoch: i64,
}

impl<F: Real> FieldSnapshot<F> {
    pub fn new(grid: GridSpec<F>, values: Array1<F>, epoch: i64) -> Result<Self> {
        if values.len() != grid.d() {
            return Err(Error::DimensionMismatch(format!(
                "snapshot has {} values, grid wants {}",
                values.len(),
                grid.d()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field snapshot".into()));
        }
        Ok(FieldSnapshot { grid, values, epoch })
    }
}

/// Sparse interpolation weights as (flat index, weight) pairs.
pub type SparseWeights<F> = Vec<(usize, F)>;

/// Contraction of sparse weights with a flattened field.
pub fn contract<F: Real>(weights: &[(usize, F)], field: ArrayView1<'_, F>) -> F {
    weights.iter().map(|&(i, w)| w * field[i]).sum()
}

/// One satellite density sample, preprocessed onto the filter time grid.
#[derive(Debug, Clone)]
pub struct TrackMeasurement<F: Real> {
    /// Seconds since 2000-01-01T00:00:00 UTC, a multiple of the filter step.
    pub epoch: i64,
    pub lat: F,
    pub lt: F,
    pub alt: F,
    /// Linear density, kg m^-3.
    pub rho: F,
    /// Variance of the log10-density measurement noise.
    pub sigma_v2: F,
    pub satellite_id: String,
}

// Per-axis linear interpolation: node pair (i0, i1) and fraction t in [0, 1].
struct AxisLerp<F> {
    i0: usize,
    i1: usize,
    t: F,
}

fn clamped_axis<F: Real>(value: F, min: F, step: F, n: usize) -> AxisLerp<F> {
    let u = (value - min) / step;
    let last_cell = F::of((n - 2) as f64);
    let u = u.max(F::zero()).min(last_cell + F::one());
    let mut i0 = u.floor();
    if i0 > last_cell {
        i0 = last_cell; // value at the top node lands in the last cell with t = 1
    }
    let t = (u - i0).max(F::zero()).min(F::one());
    let i0 = i0.f64() as usize;
    AxisLerp { i0, i1: i0 + 1, t }
}

fn periodic_axis<F: Real>(value: F, period: F, step: F, n: usize) -> AxisLerp<F> {
    let mut w = value % period;
    if w < F::zero() {
        w += period;
    }
    if w >= period {
        w = F::zero(); // w == period can appear from rounding of the remainder
    }
    let u = w / step;
    let mut i0 = u.floor().f64() as usize;
    if i0 >= n {
        i0 = n - 1;
    }
    let t = (u - F::of(i0 as f64)).max(F::zero()).min(F::one());
    AxisLerp { i0, i1: (i0 + 1) % n, t }
}

/// Tri-linear interpolation weights at (lat, lt, alt). Latitude clamps to the
/// grid edge, local time wraps, altitude outside the grid is a hard error.
/// At most 8 nonzero weights, nonnegative, summing to 1.
pub fn trilinear_weights<F: Real>(
    grid: &GridSpec<F>,
    lat: F,
    lt: F,
    alt: F,
) -> Result<SparseWeights<F>> {
    grid.validate()?;
    if !lat.is_finite() {
        return Err(Error::NonFiniteCoordinate("lat"));
    }
    if !lt.is_finite() {
        return Err(Error::NonFiniteCoordinate("lt"));
    }
    if !alt.is_finite() {
        return Err(Error::NonFiniteCoordinate("alt"));
    }
    if alt < grid.alt_min || alt > grid.alt_max {
        return Err(Error::AltitudeOutOfRange {
            alt: alt.f64(),
            min: grid.alt_min.f64(),
            max: grid.alt_max.f64(),
        });
    }
    let lat = lat.max(grid.lat_min).min(grid.lat_max);

    let ax_lt = periodic_axis(lt, grid.lt_period, grid.lt_step(), grid.n_lt);
    let ax_lat = clamped_axis(lat, grid.lat_min, grid.lat_step(), grid.n_lat);
    let ax_alt = clamped_axis(alt, grid.alt_min, grid.alt_step(), grid.n_alt);

    let one = F::one();
    let mut weights = Vec::with_capacity(8);
    for (i, wi) in [(ax_lt.i0, one - ax_lt.t), (ax_lt.i1, ax_lt.t)] {
        for (j, wj) in [(ax_lat.i0, one - ax_lat.t), (ax_lat.i1, ax_lat.t)] {
            for (k, wk) in [(ax_alt.i0, one - ax_alt.t), (ax_alt.i1, ax_alt.t)] {
                let w = wi * wj * wk;
                if w > F::zero() {
                    weights.push((grid.flat_index(i, j, k), w));
                }
            }
        }
    }
    Ok(weights)
}

/// Affine log-density observation at one (lat, lt, alt) location: predicted
/// log10 density is `h_row . z + mu`, with a state-independent Jacobian.
#[derive(Debug, Clone)]
pub struct ObsOperator<F: Real> {
    /// Contraction of the interpolation weights with the basis columns.
    pub h_row: Array1<F>,
    /// Contraction of the weights with the mean field.
    pub mu: F,
    pub weights: SparseWeights<F>,
    pub lat: F,
    pub lt: F,
    pub alt: F,
}

/// Builds the observation operator at a location by contracting tri-linear
/// weights with the basis columns and mean field.
pub fn build_obs_operator<F: Real>(
    basis: &LatentBasis<F>,
    lat: F,
    lt: F,
    alt: F,
) -> Result<ObsOperator<F>> {
    let d = basis.grid.d();
    if basis.w.nrows() != d || basis.mu0.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "basis holds {}x{} W and {} mu0, grid wants d = {}",
            basis.w.nrows(),
            basis.w.ncols(),
            basis.mu0.len(),
            d
        )));
    }
    let weights = trilinear_weights(&basis.grid, lat, lt, alt)?;
    let r = basis.w.ncols();
    let mut h_row = Array1::<F>::zeros(r);
    let mut mu = F::zero();
    for &(idx, w) in &weights {
        mu += w * basis.mu0[idx];
        for j in 0..r {
            h_row[j] += w * basis.w[(idx, j)];
        }
    }
    Ok(ObsOperator { h_row, mu, weights, lat, lt, alt })
}

impl<F: Real> ObsOperator<F> {
    /// Predicted log10 density at the operator's location.
    pub fn predict_log_density(&self, z: ArrayView1<'_, F>) -> Result<F> {
        if z.len() != self.h_row.len() {
            return Err(Error::DimensionMismatch(format!(
                "latent state has {} components, operator wants {}",
                z.len(),
                self.h_row.len()
            )));
        }
        Ok(self.h_row.dot(&z) + self.mu)
    }

    /// Reconstructed linear density 10^(H z + mu).
    pub fn linear_density(&self, z: ArrayView1<'_, F>) -> Result<F> {
        Ok(F::of(10.0).powf(self.predict_log_density(z)?))
    }

    /// Positivity check on the linear-space reconstruction; false signals
    /// underflow to zero or a non-finite value, recorded as a flag rather
    /// than an error.
    pub fn positivity_ok(&self, z: ArrayView1<'_, F>) -> bool {
        match self.linear_density(z) {
            Ok(rho) => rho.is_finite() && rho > F::zero(),
            Err(_) => false,
        }
    }
}

/// Sample variance of log10(rho (1 + eps)) over `n_mc` draws of
/// eps ~ Uniform(-rel_err, rel_err), seeded for reproducibility.
///
/// Computed as the variance of log10(1 + eps): the log10(rho) shift cancels,
/// which keeps the estimate exactly independent of the density value.
pub fn mc_noise_variance<F: Real>(
    rho_meas: F,
    rel_err: F,
    n_mc: usize,
    seed: u64,
) -> Result<F> {
    if !rho_meas.is_finite() {
        return Err(Error::NonFinite("measured density".into()));
    }
    if rho_meas <= F::zero() {
        return Err(Error::NonPositiveDensity(rho_meas.f64()));
    }
    if !(rel_err >= F::zero()) || !rel_err.is_finite() {
        return Err(Error::InvalidValue(format!("relative error {rel_err} must be >= 0")));
    }
    if n_mc < 2 {
        return Err(Error::InsufficientData(format!(
            "noise variance needs n_mc >= 2, got {n_mc}"
        )));
    }
    if rel_err == F::zero() {
        return Ok(F::zero());
    }
    let a = rel_err.f64();
    let mut rng = chacha_stream(seed, 0);
    let mut samples = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let eps = rng.random_range(-a..a);
        samples.push((F::one() + F::of(eps)).log10());
    }
    let n = F::of(n_mc as f64);
    let mean = samples.iter().copied().sum::<F>() / n;
    let ss = samples.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>();
    Ok(ss / (n - F::one()))
}
