//! Driver vector assembly: solar/geomagnetic index series, monotone cubic
//! (Fritsch-Carlson) resampling to the filter grid, and circular time
//! encodings.

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use ndarray::Array1;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Driver vector length: f107, f107_bar41, kp, t1..t4.
pub const N_DRIVERS: usize = 7;
/// Day-of-year encoding period.
pub const DOY_PERIOD: f64 = 365.25;

/// Epoch 0 of the toolkit: 2000-01-01T00:00:00 UTC.
pub fn epoch_base() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2000, 1, 1)
        .expect("valid date")
        .and_hms_opt(0, 0, 0)
        .expect("valid time")
}

/// Fractional UT hours in [0, 24) and fractional day-of-year in [0, 366)
/// for an epoch in seconds since 2000-01-01T00:00:00 UTC (proleptic
/// Gregorian, no leap seconds).
pub fn epoch_ut_doy(epoch: i64) -> (f64, f64) {
    let t = epoch_base() + chrono::Duration::seconds(epoch);
    let ut = f64::from(t.time().num_seconds_from_midnight()) / 3600.0;
    let doy = f64::from(t.date().ordinal0()) + ut / 24.0;
    (ut, doy)
}

/// Sine-cosine encoding of UT (24 h period) and day-of-year (365.25 d
/// period); inputs are reduced modulo their period.
pub fn circular_encode<F: Real>(ut_hours: F, doy: F) -> (F, F, F, F) {
    let two_pi = F::of(std::f64::consts::TAU);
    let ut = two_pi * (ut_hours / F::of(24.0));
    let dy = two_pi * (doy / F::of(DOY_PERIOD));
    (ut.cos(), ut.sin(), dy.cos(), dy.sin())
}

/// Monotone piecewise-cubic Hermite interpolant with Fritsch-Carlson slope
/// limiting and the standard three-point endpoint rule. Passes through all
/// knots; monotone data produce monotone output; C1 continuous.
#[derive(Debug, Clone)]
pub struct Pchip<F: Real> {
    x: Vec<F>,
    y: Vec<F>,
    d: Vec<F>,
}

impl<F: Real> Pchip<F> {
    pub fn new(x: Vec<F>, y: Vec<F>) -> Result<Self> {
        let n = x.len();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} knots vs {} values",
                n,
                y.len()
            )));
        }
        if n < 2 {
            return Err(Error::InsufficientData("interpolation needs at least 2 knots".into()));
        }
        for i in 0..n {
            if !x[i].is_finite() || !y[i].is_finite() {
                return Err(Error::NonFinite("interpolation knots".into()));
            }
            if i > 0 && x[i] <= x[i - 1] {
                return Err(Error::DuplicateEpoch(x[i].f64() as i64));
            }
        }

        let m = n - 1;
        let h: Vec<F> = (0..m).map(|i| x[i + 1] - x[i]).collect();
        let delta: Vec<F> = (0..m).map(|i| (y[i + 1] - y[i]) / h[i]).collect();

        let mut d = vec![F::zero(); n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for i in 1..m {
                // Weighted harmonic mean when the secants agree in sign.
                if delta[i - 1] * delta[i] > F::zero() {
                    let w1 = F::of(2.0) * h[i] + h[i - 1];
                    let w2 = h[i] + F::of(2.0) * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = endpoint_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = endpoint_slope(h[m - 1], h[m - 2], delta[m - 1], delta[m - 2]);
        }
        Ok(Pchip { x, y, d })
    }

    pub fn eval(&self, xq: F) -> Result<F> {
        let n = self.x.len();
        if !xq.is_finite() {
            return Err(Error::NonFinite("interpolation query".into()));
        }
        if xq < self.x[0] || xq > self.x[n - 1] {
            return Err(Error::OutOfRangeEpoch {
                epoch: xq.f64() as i64,
                first: self.x[0].f64() as i64,
                last: self.x[n - 1].f64() as i64,
            });
        }
        // Rightmost interval whose left knot is <= xq.
        let mut i = match self
            .x
            .binary_search_by(|v| v.partial_cmp(&xq).expect("finite knots"))
        {
            Ok(idx) => idx,
            Err(idx) => idx - 1,
        };
        if i == n - 1 {
            i -= 1;
        }
        let h = self.x[i + 1] - self.x[i];
        let t = (xq - self.x[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let two = F::of(2.0);
        let three = F::of(3.0);
        let h00 = two * t3 - three * t2 + F::one();
        let h10 = t3 - two * t2 + t;
        let h01 = -two * t3 + three * t2;
        let h11 = t3 - t2;
        Ok(h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1])
    }
}

// Non-centered three-point endpoint slope with monotonicity clamping;
// arguments are ordered from the boundary inward.
fn endpoint_slope<F: Real>(h0: F, h1: F, delta0: F, delta1: F) -> F {
    let mut d = ((F::of(2.0) * h0 + h1) * delta0 - h0 * delta1) / (h0 + h1);
    if d * delta0 <= F::zero() {
        d = F::zero();
    } else if delta0 * delta1 <= F::zero() && d.abs() > F::of(3.0) * delta0.abs() {
        d = F::of(3.0) * delta0;
    }
    d
}

/// Hourly-cadence index series: F10.7, its 41-day average, and kp, on
/// strictly increasing integer-second epochs.
#[derive(Debug, Clone)]
pub struct DriverSeries<F: Real> {
    pub epochs: Vec<i64>,
    pub f107: Vec<F>,
    pub f107_bar41: Vec<F>,
    pub kp: Vec<F>,
}

// kp validation tolerance: interpolation can spill a few ulps past a knot.
const KP_TOL: f64 = 1e-9;

impl<F: Real> DriverSeries<F> {
    pub fn new(epochs: Vec<i64>, f107: Vec<F>, f107_bar41: Vec<F>, kp: Vec<F>) -> Result<Self> {
        let n = epochs.len();
        if f107.len() != n || f107_bar41.len() != n || kp.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "driver columns disagree: {n} epochs, {} f107, {} f107_bar41, {} kp",
                f107.len(),
                f107_bar41.len(),
                kp.len()
            )));
        }
        if n < 2 {
            return Err(Error::InsufficientData("driver series needs at least 2 rows".into()));
        }
        for i in 0..n {
            if i > 0 && epochs[i] <= epochs[i - 1] {
                return Err(Error::DuplicateEpoch(epochs[i]));
            }
            if !f107[i].is_finite() || !f107_bar41[i].is_finite() || !kp[i].is_finite() {
                return Err(Error::NonFinite(format!("driver row {i}")));
            }
            let kp_v = kp[i].f64();
            if !(-KP_TOL..=9.0 + KP_TOL).contains(&kp_v) {
                return Err(Error::InvalidValue(format!(
                    "kp {kp_v} outside [0, 9] at epoch {}",
                    epochs[i]
                )));
            }
        }
        Ok(DriverSeries { epochs, f107, f107_bar41, kp })
    }

    pub fn first_epoch(&self) -> i64 {
        self.epochs[0]
    }

    pub fn last_epoch(&self) -> i64 {
        *self.epochs.last().expect("nonempty by construction")
    }

    /// Builds the reusable interpolant over this series.
    pub fn interp(&self) -> Result<DriverInterp<F>> {
        let x: Vec<F> = self.epochs.iter().map(|&e| F::of(e as f64)).collect();
        Ok(DriverInterp {
            first: self.first_epoch(),
            last: self.last_epoch(),
            f107: Pchip::new(x.clone(), self.f107.clone())?,
            f107_bar41: Pchip::new(x.clone(), self.f107_bar41.clone())?,
            kp: Pchip::new(x, self.kp.clone())?,
        })
    }
}

/// Assembled per-step driver vector [f107, f107_bar41, kp, t1, t2, t3, t4].
#[derive(Debug, Clone)]
pub struct DriverVector<F: Real> {
    pub u: Array1<F>,
}

/// PCHIP interpolants for the three indices, reusable across filter steps.
#[derive(Debug, Clone)]
pub struct DriverInterp<F: Real> {
    first: i64,
    last: i64,
    f107: Pchip<F>,
    f107_bar41: Pchip<F>,
    kp: Pchip<F>,
}

impl<F: Real> DriverInterp<F> {
    /// Driver vector at an epoch: PCHIP-resampled indices plus circular
    /// encodings of the epoch's UT and day-of-year.
    pub fn at(&self, epoch: i64) -> Result<DriverVector<F>> {
        if epoch < self.first || epoch > self.last {
            return Err(Error::OutOfRangeEpoch {
                epoch,
                first: self.first,
                last: self.last,
            });
        }
        let x = F::of(epoch as f64);
        let (ut, doy) = epoch_ut_doy(epoch);
        let (t1, t2, t3, t4) = circular_encode(F::of(ut), F::of(doy));
        let mut u = Array1::<F>::zeros(N_DRIVERS);
        u[0] = self.f107.eval(x)?;
        u[1] = self.f107_bar41.eval(x)?;
        u[2] = self.kp.eval(x)?;
        u[3] = t1;
        u[4] = t2;
        u[5] = t3;
        u[6] = t4;
        Ok(DriverVector { u })
    }
}

/// Driver vector at one epoch (builds a fresh interpolant; use
/// [`DriverSeries::interp`] for repeated queries).
pub fn driver_at<F: Real>(series: &DriverSeries<F>, epoch: i64) -> Result<DriverVector<F>> {
    series.interp()?.at(epoch)
}

/// Resamples the three index channels onto the given epochs (all within the
/// source range, strictly increasing).
pub fn pchip_resample<F: Real>(series: &DriverSeries<F>, grid_epochs: &[i64]) -> Result<DriverSeries<F>> {
    let interp = series.interp()?;
    let mut f107 = Vec::with_capacity(grid_epochs.len());
    let mut f107_bar41 = Vec::with_capacity(grid_epochs.len());
    let mut kp = Vec::with_capacity(grid_epochs.len());
    for &e in grid_epochs {
        if e < series.first_epoch() || e > series.last_epoch() {
            return Err(Error::OutOfRangeEpoch {
                epoch: e,
                first: series.first_epoch(),
                last: series.last_epoch(),
            });
        }
        let x = F::of(e as f64);
        f107.push(interp.f107.eval(x)?);
        f107_bar41.push(interp.f107_bar41.eval(x)?);
        kp.push(interp.kp.eval(x)?);
    }
    DriverSeries::new(grid_epochs.to_vec(), f107, f107_bar41, kp)
}
