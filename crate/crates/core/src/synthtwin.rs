//! Synthetic ground truth for desk-scale verification: a known sparse
//! latent system lifted onto the density grid, parametric satellite tracks,
//! and noisy along-track sampling of the lifted field.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataio::RawMeasurementRow;
use crate::drivers::{circular_encode, epoch_ut_doy, DriverSeries, N_DRIVERS};
use crate::error::{Error, Result};
use crate::grid_obs::{contract, mc_noise_variance, trilinear_weights, GridSpec, TrackMeasurement};
use crate::rng::{chacha_stream, derive, label_tag};
use crate::scalar::Real;

/// Norm bound beyond which truth propagation is declared divergent.
pub const TRUTH_NORM_BOUND: f64 = 1e6;

/// Index-series profile used when generating truth drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverScenario {
    /// Calm background with mild diurnal wiggle.
    Quiet,
    /// Linear activity increase over the window.
    Ramp,
    /// kp rises 2 -> 8 -> 2 across the middle half of the window.
    Storm,
}

impl DriverScenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            DriverScenario::Quiet => "quiet",
            DriverScenario::Ramp => "ramp",
            DriverScenario::Storm => "storm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "quiet" => Ok(DriverScenario::Quiet),
            "ramp" => Ok(DriverScenario::Ramp),
            "storm" => Ok(DriverScenario::Storm),
            other => Err(Error::Config(format!("unknown driver scenario {other:?}"))),
        }
    }
}

/// One sparse quadratic coupling: state row receives coeff * z_i * z_j.
#[derive(Debug, Clone, Copy)]
pub struct QuadTerm<F: Real> {
    pub row: usize,
    pub i: usize,
    pub j: usize,
    pub coeff: F,
}

/// Ground-truth system: stable linear core, driver coupling, sparse
/// quadratic terms, and a random orthonormal lift onto the grid.
#[derive(Debug, Clone)]
pub struct TwinSpec<F: Real> {
    pub r_true: usize,
    pub seed: u64,
    /// Seed for the spatial lift, kept separate so perturbed copies share the
    /// same grid structure while their dynamics and noise differ.
    pub lift_seed: u64,
    pub a0: Array2<F>,
    pub b0: Array2<F>,
    pub quad: Vec<QuadTerm<F>>,
    pub grid: GridSpec<F>,
    /// Baseline log10 density at the grid floor.
    pub mean_log10: F,
    pub scenario: DriverScenario,
    pub hours: usize,
    pub cadence_s: i64,
    /// Latent process noise standard deviation per step.
    pub process_noise_std: F,
    pub start_epoch: i64,
}

impl<F: Real> TwinSpec<F> {
    /// Desk-scale storm system: six latent modes on an 18x9x11 grid with a
    /// 72-hour window at hourly cadence.
    pub fn storm_desk(seed: u64) -> Self {
        let r = 6;
        let mut a0 = Array2::<F>::zeros((r, r));
        let diag = [0.92, 0.90, 0.88, 0.85, 0.80, 0.75];
        for (i, &d) in diag.iter().enumerate() {
            a0[(i, i)] = F::of(d);
        }
        a0[(0, 1)] = F::of(0.05);
        a0[(1, 0)] = F::of(-0.04);
        a0[(2, 3)] = F::of(0.06);
        a0[(3, 2)] = F::of(-0.03);
        a0[(4, 0)] = F::of(0.02);
        a0[(5, 2)] = F::of(0.02);

        let mut b0 = Array2::<F>::zeros((r, N_DRIVERS));
        b0[(0, 0)] = F::of(0.004);
        b0[(1, 0)] = F::of(0.002);
        b0[(0, 1)] = F::of(0.002);
        b0[(0, 2)] = F::of(0.060);
        b0[(1, 2)] = F::of(0.040);
        b0[(2, 2)] = F::of(-0.030);
        b0[(3, 2)] = F::of(0.020);
        b0[(2, 3)] = F::of(0.050);
        b0[(3, 4)] = F::of(0.040);
        b0[(4, 5)] = F::of(0.030);
        b0[(5, 6)] = F::of(0.030);
        b0[(4, 3)] = F::of(-0.020);

        let quad = vec![
            QuadTerm { row: 3, i: 0, j: 0, coeff: F::of(0.004) },
            QuadTerm { row: 4, i: 0, j: 1, coeff: F::of(0.006) },
            QuadTerm { row: 5, i: 1, j: 1, coeff: F::of(-0.005) },
        ];

        TwinSpec {
            r_true: r,
            seed,
            lift_seed: seed,
            a0,
            b0,
            quad,
            grid: GridSpec::with_dims(18, 9, 11),
            mean_log10: F::of(-11.0),
            scenario: DriverScenario::Storm,
            hours: 72,
            cadence_s: 3600,
            process_noise_std: F::of(0.05),
            start_epoch: 0,
        }
    }

    /// Copy with every operator entry multiplied by (1 + frac * uniform),
    /// standing in for a real system that differs from the trained one. The
    /// lift is kept so both systems describe the same spatial structure.
    pub fn perturbed(&self, frac: F, seed: u64) -> Self {
        let mut rng = chacha_stream(seed, 1);
        let mut jiggle = |v: F| {
            let eps: f64 = rng.random_range(-1.0..1.0);
            v * (F::one() + frac * F::of(eps))
        };
        let mut out = self.clone();
        out.seed = seed;
        out.lift_seed = self.lift_seed;
        out.a0 = self.a0.mapv(&mut jiggle);
        out.b0 = self.b0.mapv(&mut jiggle);
        for term in &mut out.quad {
            term.coeff = jiggle(term.coeff);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.r_true == 0 {
            return Err(Error::InvalidValue("twin needs at least one latent mode".into()));
        }
        if self.a0.dim() != (self.r_true, self.r_true)
            || self.b0.dim() != (self.r_true, N_DRIVERS)
        {
            return Err(Error::DimensionMismatch(format!(
                "twin operators {}x{} and {}x{} disagree with r_true = {}",
                self.a0.nrows(),
                self.a0.ncols(),
                self.b0.nrows(),
                self.b0.ncols(),
                self.r_true
            )));
        }
        if self.a0.iter().any(|v| !v.is_finite()) || self.b0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("twin operators".into()));
        }
        for term in &self.quad {
            if term.row >= self.r_true || term.i >= self.r_true || term.j >= self.r_true {
                return Err(Error::InvalidValue(format!(
                    "quadratic term ({}, {}, {}) outside r_true = {}",
                    term.row, term.i, term.j, self.r_true
                )));
            }
            if !term.coeff.is_finite() {
                return Err(Error::NonFinite("quadratic coefficient".into()));
            }
        }
        if self.hours < 1 || self.cadence_s <= 0 {
            return Err(Error::InvalidValue(format!(
                "window of {} hours at {} s cadence",
                self.hours, self.cadence_s
            )));
        }
        if !(self.process_noise_std >= F::zero()) {
            return Err(Error::InvalidValue("negative process noise".into()));
        }
        Ok(())
    }
}

/// Index series for a scenario over the twin window, one knot per cadence
/// step inclusive of both ends.
pub fn scenario_series<F: Real>(
    scenario: DriverScenario,
    start_epoch: i64,
    hours: usize,
    cadence_s: i64,
) -> Result<DriverSeries<F>> {
    let m = hours + 1;
    let mut epochs = Vec::with_capacity(m);
    let mut f107 = Vec::with_capacity(m);
    let mut f107_bar41 = Vec::with_capacity(m);
    let mut kp = Vec::with_capacity(m);
    for k in 0..m {
        let phase = k as f64 / hours as f64;
        let hour = k as f64 * cadence_s as f64 / 3600.0;
        let diurnal = (std::f64::consts::TAU * hour / 24.0).sin();
        let (f, fbar, kp_v) = match scenario {
            DriverScenario::Quiet => (120.0 + 5.0 * diurnal, 120.0, 2.0),
            DriverScenario::Ramp => (
                100.0 + 80.0 * phase,
                100.0 + 40.0 * phase,
                1.0 + 4.0 * phase,
            ),
            DriverScenario::Storm => {
                // Triangular kp bump over the middle half of the window.
                let bump = if phase <= 0.25 || phase >= 0.75 {
                    0.0
                } else if phase <= 0.5 {
                    (phase - 0.25) / 0.25
                } else {
                    (0.75 - phase) / 0.25
                };
                (150.0 + 10.0 * diurnal, 150.0, 2.0 + 6.0 * bump)
            }
        };
        epochs.push(start_epoch + k as i64 * cadence_s);
        f107.push(F::of(f));
        f107_bar41.push(F::of(fbar));
        kp.push(F::of(kp_v));
    }
    DriverSeries::new(epochs, f107, f107_bar41, kp)
}

/// Everything the twin produces: truth latents, lifted density snapshots,
/// the lift itself, and the driver series that forced it.
#[derive(Debug, Clone)]
pub struct TwinTruth<F: Real> {
    pub grid: GridSpec<F>,
    pub epochs: Vec<i64>,
    /// r_true x m latent truth.
    pub latent: Array2<F>,
    /// d x m linear density.
    pub snapshots: Array2<F>,
    /// d x r_true orthonormal lift.
    pub lift: Array2<F>,
    /// Log10 background field, d values.
    pub mean_field: Array1<F>,
    pub drivers: DriverSeries<F>,
}

// Columnwise modified Gram-Schmidt, in place.
fn orthonormalize<F: Real>(w: &mut Array2<F>) -> Result<()> {
    let cols = w.ncols();
    for j in 0..cols {
        for i in 0..j {
            let proj = w.column(i).dot(&w.column(j));
            let wi = w.column(i).to_owned();
            let mut wj = w.column_mut(j);
            wj.scaled_add(-proj, &wi);
        }
        let norm = w.column(j).dot(&w.column(j)).sqrt();
        if !(norm > F::zero()) || !norm.is_finite() {
            return Err(Error::DegenerateData("random lift collapsed".into()));
        }
        w.column_mut(j).mapv_inplace(|v| v / norm);
    }
    Ok(())
}

fn driver_vector_at<F: Real>(series: &DriverSeries<F>, k: usize) -> Array1<F> {
    let (ut, doy) = epoch_ut_doy(series.epochs[k]);
    let (t1, t2, t3, t4) = circular_encode(F::of(ut), F::of(doy));
    let mut u = Array1::<F>::zeros(N_DRIVERS);
    u[0] = series.f107[k];
    u[1] = series.f107_bar41[k];
    u[2] = series.kp[k];
    u[3] = t1;
    u[4] = t2;
    u[5] = t3;
    u[6] = t4;
    u
}

/// Propagates the twin system and lifts it onto the grid. Reproducible from
/// the `TwinSpec` seeds alone; per-step noise uses independent counter
/// streams.
pub fn generate_truth<F: Real>(spec: &TwinSpec<F>) -> Result<TwinTruth<F>> {
    spec.validate()?;
    let grid = spec.grid.clone();
    let d = grid.d();
    let r = spec.r_true;
    let m = spec.hours + 1;

    let mut lift = Array2::<F>::zeros((d, r));
    {
        let mut rng = chacha_stream(spec.lift_seed, 10);
        for v in lift.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v = F::of(g);
        }
    }
    orthonormalize(&mut lift)?;

    let mut mean_field = Array1::<F>::zeros(d);
    let alt_span = grid.alt_max - grid.alt_min;
    for i_lt in 0..grid.n_lt {
        let lt = grid.lt_at(i_lt);
        let lt_angle = F::of(std::f64::consts::TAU) * lt / grid.lt_period;
        for j_lat in 0..grid.n_lat {
            let lat_rad = grid.lat_at(j_lat) * F::of(std::f64::consts::PI / 180.0);
            for k_alt in 0..grid.n_alt {
                let frac = (grid.alt_at(k_alt) - grid.alt_min) / alt_span;
                let idx = grid.flat_index(i_lt, j_lat, k_alt);
                mean_field[idx] = spec.mean_log10 - F::of(3.0) * frac
                    + F::of(0.2) * lat_rad.cos()
                    + F::of(0.05) * lt_angle.cos();
            }
        }
    }

    let drivers = scenario_series(spec.scenario, spec.start_epoch, spec.hours, spec.cadence_s)?;
    let epochs = drivers.epochs.clone();

    let mut latent = Array2::<F>::zeros((r, m));
    let mut z = Array1::<F>::zeros(r);
    for k in 0..m - 1 {
        let u = driver_vector_at(&drivers, k);
        let mut next = spec.a0.dot(&z) + spec.b0.dot(&u);
        for term in &spec.quad {
            next[term.row] += term.coeff * z[term.i] * z[term.j];
        }
        if spec.process_noise_std > F::zero() {
            let mut rng = chacha_stream(spec.seed, 100 + k as u64);
            for v in next.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *v += spec.process_noise_std * F::of(g);
            }
        }
        let norm = next.dot(&next).sqrt();
        if !norm.is_finite() || norm > F::of(TRUTH_NORM_BOUND) {
            return Err(Error::UnstableTruth(k + 1));
        }
        z = next;
        latent.column_mut(k + 1).assign(&z);
    }

    let log_field = &lift.dot(&latent)
        + &mean_field
            .view()
            .insert_axis(ndarray::Axis(1))
            .broadcast((d, m))
            .expect("broadcast mean over columns");
    let snapshots = log_field.mapv(|v| F::of(10f64.powf(v.f64())));

    Ok(TwinTruth { grid, epochs, latent, snapshots, lift, mean_field, drivers })
}

/// Parametric circular-orbit track: constant altitude, sinusoidal latitude,
/// day/night local-time branches with nodal drift.
#[derive(Debug, Clone)]
pub struct OrbitSpec<F: Real> {
    pub alt_km: F,
    pub inclination_deg: F,
    pub period_min: F,
    pub phase_rad: F,
    pub node_lt_hours: F,
    pub node_drift_h_per_day: F,
}

impl<F: Real> OrbitSpec<F> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alt_km", self.alt_km),
            ("inclination_deg", self.inclination_deg),
            ("period_min", self.period_min),
            ("phase_rad", self.phase_rad),
            ("node_lt_hours", self.node_lt_hours),
            ("node_drift_h_per_day", self.node_drift_h_per_day),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("orbit {name}")));
            }
        }
        let alt = self.alt_km.f64();
        if !(100.0..=980.0).contains(&alt) {
            return Err(Error::AltitudeOutOfRange { alt, min: 100.0, max: 980.0 });
        }
        if !(self.period_min > F::zero()) {
            return Err(Error::InvalidValue(format!(
                "orbital period {} min must be positive",
                self.period_min
            )));
        }
        Ok(())
    }
}

/// Latitude clamp matching the grid's poleward edge.
pub const LAT_CLAMP_DEG: f64 = 87.5;

/// Track positions (lat deg, lt hours, alt km) at the given epochs, measured
/// from the first epoch.
pub fn fly_orbit<F: Real>(orbit: &OrbitSpec<F>, epochs: &[i64]) -> Result<Vec<(F, F, F)>> {
    orbit.validate()?;
    if epochs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let t0 = epochs[0];
    let period_s = orbit.period_min * F::of(60.0);
    let amp = orbit.inclination_deg.min(F::of(90.0));
    let clamp = F::of(LAT_CLAMP_DEG);
    let mut out = Vec::with_capacity(epochs.len());
    for &e in epochs {
        let t = F::of((e - t0) as f64);
        let angle = F::of(std::f64::consts::TAU) * t / period_s + orbit.phase_rad;
        let lat = (amp * angle.sin()).max(-clamp).min(clamp);
        let ascending = angle.cos() >= F::zero();
        let mut lt = orbit.node_lt_hours + orbit.node_drift_h_per_day * t / F::of(86_400.0);
        if !ascending {
            lt += F::of(12.0);
        }
        lt = lt - F::of(24.0) * (lt / F::of(24.0)).floor();
        out.push((lat, lt, orbit.alt_km));
    }
    Ok(out)
}

/// Samples the truth field along a track: tri-linear in space on the log10
/// field, linear in time between snapshots, multiplicative uniform noise of
/// half-width `rel_err`, optional negative-value injection, and the Monte
/// Carlo noise variance attached. Noise streams are indexed by sample so
/// generation is order-independent.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_measurements<F: Real>(
    truth: &TwinTruth<F>,
    epochs: &[i64],
    positions: &[(F, F, F)],
    satellite_id: &str,
    rel_err: F,
    n_mc: usize,
    seed: u64,
    negative_fraction: F,
) -> Result<Vec<TrackMeasurement<F>>> {
    if epochs.len() != positions.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} epochs vs {} positions",
            epochs.len(),
            positions.len()
        )));
    }
    if epochs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let first = truth.epochs[0];
    let last = *truth.epochs.last().expect("nonempty truth");
    let cadence = if truth.epochs.len() > 1 {
        truth.epochs[1] - truth.epochs[0]
    } else {
        1
    };
    let log_snapshots = truth.snapshots.mapv(|v| F::of(v.f64().log10()));
    let mut out = Vec::with_capacity(epochs.len());
    for (idx, (&e, &(lat, lt, alt))) in epochs.iter().zip(positions).enumerate() {
        if e < first || e > last {
            return Err(Error::OutOfRangeEpoch { epoch: e, first, last });
        }
        let k = (((e - first) / cadence) as usize).min(truth.epochs.len() - 2);
        let frac = F::of((e - truth.epochs[k]) as f64 / cadence as f64);
        let weights = trilinear_weights(&truth.grid, lat, lt, alt)?;
        let log_lo = contract(&weights, log_snapshots.column(k));
        let log_hi = contract(&weights, log_snapshots.column(k + 1));
        let log_rho = log_lo + frac * (log_hi - log_lo);
        let rho_true = F::of(10f64.powf(log_rho.f64()));

        let mut rho = rho_true;
        if rel_err > F::zero() {
            let mut rng = chacha_stream(seed, 2 * idx as u64);
            let eps: f64 = rng.random_range(-rel_err.f64()..rel_err.f64());
            rho = rho_true * (F::one() + F::of(eps));
        }
        if negative_fraction > F::zero() {
            let mut rng = chacha_stream(seed, 2 * idx as u64 + 1);
            let v: f64 = rng.random_range(0.0..1.0);
            if v < negative_fraction.f64() {
                rho = -rho.abs();
            }
        }
        let sigma_v2 = if rho > F::zero() {
            let s = derive(seed, e as u64, label_tag(satellite_id));
            mc_noise_variance(rho, rel_err, n_mc, s)?
        } else {
            F::zero()
        };
        out.push(TrackMeasurement {
            epoch: e,
            lat,
            lt,
            alt,
            rho,
            sigma_v2,
            satellite_id: satellite_id.to_string(),
        });
    }
    Ok(out)
}

/// Raw CSV rows for a synthesized track.
pub fn measurements_to_rows<F: Real>(meas: &[TrackMeasurement<F>]) -> Vec<RawMeasurementRow<F>> {
    meas.iter().map(crate::dataio::to_raw).collect()
}

/// Reference latent trajectory under the twin dynamics without noise,
/// starting from z0, driven by the series knots. Used as an open-loop
/// oracle in verification.
pub fn propagate_reference<F: Real>(
    spec: &TwinSpec<F>,
    z0: ArrayView1<'_, F>,
    steps: usize,
) -> Result<Array2<F>> {
    spec.validate()?;
    if z0.len() != spec.r_true {
        return Err(Error::DimensionMismatch(format!(
            "z0 has {} entries, twin wants {}",
            z0.len(),
            spec.r_true
        )));
    }
    let drivers = scenario_series::<F>(spec.scenario, spec.start_epoch, spec.hours, spec.cadence_s)?;
    if steps >= drivers.epochs.len() {
        return Err(Error::InsufficientData(format!(
            "{} steps exceed the {}-knot driver window",
            steps,
            drivers.epochs.len()
        )));
    }
    let mut out = Array2::<F>::zeros((spec.r_true, steps + 1));
    let mut z = z0.to_owned();
    out.column_mut(0).assign(&z);
    for k in 0..steps {
        let u = driver_vector_at(&drivers, k);
        let mut next = spec.a0.dot(&z) + spec.b0.dot(&u);
        for term in &spec.quad {
            next[term.row] += term.coeff * z[term.i] * z[term.j];
        }
        let norm = next.dot(&next).sqrt();
        if !norm.is_finite() || norm > F::of(TRUTH_NORM_BOUND) {
            return Err(Error::UnstableTruth(k + 1));
        }
        z = next;
        out.column_mut(k + 1).assign(&z);
    }
    Ok(out)
}
