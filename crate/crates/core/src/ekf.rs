//! Companion-form extended Kalman filter over the augmented state
//! [z; z(-1); ...; z(-n_ar)]: prediction with the analytical process
//! Jacobian, Joseph-form single- and multi-measurement updates, and
//! missing-data propagation.

use ndarray::{s, Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::features::feature_jacobian;
use crate::grid_obs::ObsOperator;
use crate::ident::RomModel;
use crate::linalg::{cholesky, chol_solve, symmetrize};
use crate::scalar::Real;

/// Default process-noise variance of the two leading latent components.
pub const DEFAULT_Q1: f64 = 1e-2;
/// Default process-noise variance of the remaining components.
pub const DEFAULT_Q2: f64 = 1e-3;
/// Default initial variance per latent component.
pub const DEFAULT_P0: f64 = 10.0;
/// Default spin-up exclusion window, seconds.
pub const DEFAULT_SPIN_UP_S: f64 = 21_600.0;

const SYM_TOL: f64 = 1e-12;

/// Process/initial noise configuration in the r-dimensional latent space.
#[derive(Debug, Clone)]
pub struct NoiseConfig<F: Real> {
    pub q: Array2<F>,
    pub p0: Array2<F>,
    /// Evaluation exclusion window after filter start, seconds.
    pub spin_up_s: F,
    /// Multiplier applied to Q per filter step (knob for sub-step noise).
    pub q_scale: F,
    /// Innovation gate in standard deviations; None disables gating.
    pub gate_sigma: Option<F>,
}

impl<F: Real> NoiseConfig<F> {
    /// Defaults: Q = diag(q1, q1, q2, ...), P0 = 10 I, 6 h spin-up, no gate.
    pub fn default_for(r: usize) -> Self {
        let mut q = Array2::<F>::zeros((r, r));
        for i in 0..r {
            q[(i, i)] = F::of(if i < 2 { DEFAULT_Q1 } else { DEFAULT_Q2 });
        }
        NoiseConfig {
            q,
            p0: Array2::eye(r) * F::of(DEFAULT_P0),
            spin_up_s: F::of(DEFAULT_SPIN_UP_S),
            q_scale: F::one(),
            gate_sigma: None,
        }
    }

    fn validate(&self, r: usize) -> Result<()> {
        for (name, mat) in [("q", &self.q), ("p0", &self.p0)] {
            if mat.dim() != (r, r) {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, model wants {r}x{r}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            let scale = mat.iter().fold(F::one(), |acc, v| acc.max(v.abs()));
            for i in 0..r {
                for j in 0..r {
                    if (mat[(i, j)] - mat[(j, i)]).abs() > F::of(SYM_TOL) * scale {
                        return Err(Error::InvalidValue(format!("{name} is not symmetric")));
                    }
                }
            }
        }
        if !(self.q_scale > F::zero()) || self.spin_up_s < F::zero() {
            return Err(Error::InvalidValue(
                "q_scale must be positive and spin_up_s nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Companion lifting of the linear part: A_aug carries the current-step
/// operators in its top block row and identity blocks on the sub-diagonal;
/// Q_aug injects process noise only into the current-step block.
#[derive(Debug, Clone)]
pub struct AugOperators<F: Real> {
    pub a_aug: Array2<F>,
    pub q_aug: Array2<F>,
}

fn embed_q<F: Real>(q: &Array2<F>, q_scale: F, r: usize, n_aug: usize) -> Array2<F> {
    let mut q_aug = Array2::<F>::zeros((n_aug, n_aug));
    for i in 0..r {
        for j in 0..r {
            q_aug[(i, j)] = q[(i, j)] * q_scale;
        }
    }
    q_aug
}

impl<F: Real> AugOperators<F> {
    /// Companion operators at the lag-shift step (every step when the model
    /// runs at its training cadence).
    pub fn build(model: &RomModel<F>, noise: &NoiseConfig<F>) -> Result<Self> {
        noise.validate(model.r)?;
        let r = model.r;
        let n_aug = model.n_aug();
        let mut a_aug = Array2::<F>::zeros((n_aug, n_aug));
        a_aug.slice_mut(s![..r, ..r]).assign(&model.a);
        for j in 0..model.n_ar {
            let col = (j + 1) * r;
            a_aug
                .slice_mut(s![..r, col..col + r])
                .assign(&model.a_lags[j]);
            for i in 0..r {
                a_aug[(col + i, j * r + i)] = F::one();
            }
        }
        Ok(AugOperators {
            a_aug,
            q_aug: embed_q(&noise.q, noise.q_scale, r, n_aug),
        })
    }
}

/// Per-measurement update diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct InnovationRecord<F: Real> {
    /// Innovation in log10 density.
    pub nu: F,
    /// Innovation variance H P H' + sigma^2.
    pub s: F,
    /// True when the innovation gate rejected this measurement.
    pub gated: bool,
    /// Linear-space positivity check of the posterior reconstruction.
    pub positivity_ok: bool,
}

/// Augmented filter state: companion mean, covariance, embedded process
/// noise, and the driver-lag bookkeeping needed by the autoregressive model.
#[derive(Debug, Clone)]
pub struct FilterState<F: Real> {
    pub zeta: Array1<F>,
    pub p_aug: Array2<F>,
    pub q_aug: Array2<F>,
    /// Completed filter steps since initialization.
    pub k: usize,
    /// Filter step length, seconds.
    pub cadence_s: F,
    pub r: usize,
    /// Driver history at training-cadence spacing, newest first.
    pub u_lags: Vec<Array1<F>>,
    pub gate_sigma: Option<F>,
}

/// Zero initial mean with block-diagonal P0 covariance; state and driver lag
/// buffers start zero-filled (the spin-up window covers the transient).
pub fn init_filter<F: Real>(model: &RomModel<F>, noise: &NoiseConfig<F>) -> Result<FilterState<F>> {
    noise.validate(model.r)?;
    let r = model.r;
    let n_aug = model.n_aug();
    let mut p_aug = Array2::<F>::zeros((n_aug, n_aug));
    for blk in 0..=model.n_ar {
        p_aug
            .slice_mut(s![blk * r..(blk + 1) * r, blk * r..(blk + 1) * r])
            .assign(&noise.p0);
    }
    Ok(FilterState {
        zeta: Array1::zeros(n_aug),
        p_aug,
        q_aug: embed_q(&noise.q, noise.q_scale, r, n_aug),
        k: 0,
        cadence_s: model.cadence_s,
        r,
        u_lags: vec![Array1::zeros(model.n_u); model.n_ar],
        gate_sigma: noise.gate_sigma,
    })
}

impl<F: Real> FilterState<F> {
    fn z_block(&self, j: usize) -> ArrayView1<'_, F> {
        self.zeta.slice(s![j * self.r..(j + 1) * self.r])
    }

    /// Current latent mean and its covariance block.
    pub fn extract_current(&self) -> (Array1<F>, Array2<F>) {
        (
            self.zeta.slice(s![..self.r]).to_owned(),
            self.p_aug.slice(s![..self.r, ..self.r]).to_owned(),
        )
    }

    // True when the upcoming step crosses a training-step boundary and the
    // lag blocks shift down.
    fn next_step_shifts(&self, model: &RomModel<F>) -> bool {
        model.n_ar > 0 && (self.k + 1) % model.lag_stride == 0
    }

    /// Analytical Jacobian of the upcoming prediction step with respect to
    /// the companion state: top block row is [A + Xi dphi/dz, A_1, ..., A_n];
    /// lower rows shift on lag boundaries and hold otherwise.
    pub fn process_jacobian(
        &self,
        model: &RomModel<F>,
        u: ArrayView1<'_, F>,
    ) -> Result<Array2<F>> {
        let r = self.r;
        let n_ar = model.n_ar;
        let n_aug = model.n_aug();
        let shift = self.next_step_shifts(model);
        let mut f = Array2::<F>::zeros((n_aug, n_aug));
        let mut top_left = model.a.clone();
        if model.nl_spec.p() > 0 {
            let dphi = feature_jacobian(&model.nl_spec, &model.scaler, self.z_block(0), u)?;
            top_left = top_left + model.xi_nl.dot(&dphi);
        }
        f.slice_mut(s![..r, ..r]).assign(&top_left);
        for j in 0..n_ar {
            let col = (j + 1) * r;
            f.slice_mut(s![..r, col..col + r]).assign(&model.a_lags[j]);
        }
        for blk in 1..=n_ar {
            let row = blk * r;
            let col = if shift { (blk - 1) * r } else { row };
            for i in 0..r {
                f[(row + i, col + i)] = F::one();
            }
        }
        Ok(f)
    }

    /// Advances mean and covariance one filter step with driver u. The mean
    /// moves under the full nonlinear map; the covariance under the
    /// analytical Jacobian. Lag blocks shift only on training-step
    /// boundaries (`lag_stride` filter steps apart).
    pub fn predict(&self, model: &RomModel<F>, u: ArrayView1<'_, F>) -> Result<FilterState<F>> {
        let r = self.r;
        let n_ar = model.n_ar;
        let n_aug = model.n_aug();
        if self.zeta.len() != n_aug {
            return Err(Error::DimensionMismatch(format!(
                "state has {} components, model wants {}",
                self.zeta.len(),
                n_aug
            )));
        }
        if u.len() != model.n_u || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("driver vector".into()));
        }

        let z = self.z_block(0);
        let z_lag_views: Vec<ArrayView1<'_, F>> = (1..=n_ar).map(|j| self.z_block(j)).collect();
        let u_lag_views: Vec<ArrayView1<'_, F>> = self.u_lags.iter().map(|v| v.view()).collect();
        let z_next = model.one_step(z, &z_lag_views, u, &u_lag_views)?;

        let shift = self.next_step_shifts(model);
        let f = self.process_jacobian(model, u)?;

        let mut zeta_new = Array1::<F>::zeros(n_aug);
        zeta_new.slice_mut(s![..r]).assign(&z_next);
        for blk in 1..=n_ar {
            let src = if shift { self.z_block(blk - 1) } else { self.z_block(blk) };
            zeta_new.slice_mut(s![blk * r..(blk + 1) * r]).assign(&src);
        }

        let mut p_new = f.dot(&self.p_aug).dot(&f.t()) + &self.q_aug;
        symmetrize(&mut p_new);

        let mut u_lags = self.u_lags.clone();
        if shift && n_ar > 0 {
            u_lags.rotate_right(1);
            u_lags[0] = u.to_owned();
        }

        if zeta_new.iter().any(|v| !v.is_finite()) || p_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(self.k + 1));
        }
        Ok(FilterState {
            zeta: zeta_new,
            p_aug: p_new,
            q_aug: self.q_aug.clone(),
            k: self.k + 1,
            cadence_s: self.cadence_s,
            r,
            u_lags,
            gate_sigma: self.gate_sigma,
        })
    }

    /// Joseph-form update with one scalar log-density measurement.
    pub fn update_single(
        &self,
        obs: &ObsOperator<F>,
        y: F,
        sigma_v2: F,
    ) -> Result<(FilterState<F>, InnovationRecord<F>)> {
        let (state, records) =
            self.update_multi(std::slice::from_ref(obs), &[y], &[sigma_v2])?;
        Ok((state, records[0]))
    }

    /// Joseph-form batch update with simultaneous measurements from several
    /// satellites, assuming independent errors (diagonal R). Observation
    /// rows are zero-padded to the companion state.
    pub fn update_multi(
        &self,
        obs: &[ObsOperator<F>],
        y: &[F],
        sigma_v2: &[F],
    ) -> Result<(FilterState<F>, Vec<InnovationRecord<F>>)> {
        if obs.is_empty() {
            return Err(Error::EmptyInput);
        }
        if y.len() != obs.len() || sigma_v2.len() != obs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} operators vs {} measurements and {} variances",
                obs.len(),
                y.len(),
                sigma_v2.len()
            )));
        }
        let r = self.r;
        let n_aug = self.zeta.len();
        for (i, op) in obs.iter().enumerate() {
            if op.h_row.len() != r {
                return Err(Error::DimensionMismatch(format!(
                    "operator {i} has {} latent columns, state wants {r}",
                    op.h_row.len()
                )));
            }
            if !y[i].is_finite() {
                return Err(Error::NonFinite(format!("measurement {i}")));
            }
            if !(sigma_v2[i] > F::zero()) || !sigma_v2[i].is_finite() {
                return Err(Error::InvalidValue(format!(
                    "measurement variance {} must be positive",
                    sigma_v2[i]
                )));
            }
        }

        let z = self.z_block(0);
        let p_top = self.p_aug.slice(s![..r, ..r]);
        let mut nu = Vec::with_capacity(obs.len());
        let mut s_prior = Vec::with_capacity(obs.len());
        for (i, op) in obs.iter().enumerate() {
            nu.push(y[i] - op.predict_log_density(z)?);
            s_prior.push(op.h_row.dot(&p_top.dot(&op.h_row)) + sigma_v2[i]);
        }

        let survivors: Vec<usize> = match self.gate_sigma {
            Some(g) => (0..obs.len())
                .filter(|&i| nu[i] * nu[i] <= g * g * s_prior[i])
                .collect(),
            None => (0..obs.len()).collect(),
        };

        let finish_records = |state: &FilterState<F>| -> Vec<InnovationRecord<F>> {
            let z_post = state.z_block(0);
            (0..obs.len())
                .map(|i| InnovationRecord {
                    nu: nu[i],
                    s: s_prior[i],
                    gated: !survivors.contains(&i),
                    positivity_ok: obs[i].positivity_ok(z_post),
                })
                .collect()
        };

        if survivors.is_empty() {
            let state = self.clone();
            let records = finish_records(&state);
            return Ok((state, records));
        }

        let n_s = survivors.len();
        let mut h = Array2::<F>::zeros((n_s, n_aug));
        let mut nu_vec = Array1::<F>::zeros(n_s);
        let mut r_diag = Array1::<F>::zeros(n_s);
        for (row, &i) in survivors.iter().enumerate() {
            h.slice_mut(s![row, ..r]).assign(&obs[i].h_row);
            nu_vec[row] = nu[i];
            r_diag[row] = sigma_v2[i];
        }

        let pht = self.p_aug.dot(&h.t()); // n_aug x n_s
        let mut s_mat = h.dot(&pht);
        for i in 0..n_s {
            s_mat[(i, i)] += r_diag[i];
        }
        let l = cholesky(&s_mat).map_err(|_| {
            Error::NonPositiveInnovationVariance(
                s_mat.diag().iter().fold(f64::INFINITY, |acc, v| acc.min(v.f64())),
            )
        })?;
        let k_t = chol_solve(&l, &pht.t().to_owned()); // n_s x n_aug
        let k_gain = k_t.t().to_owned();

        let zeta_new = &self.zeta + &k_gain.dot(&nu_vec);
        let mut i_kh = Array2::<F>::eye(n_aug);
        i_kh = i_kh - k_gain.dot(&h);
        // K R K' with diagonal R: scale the gain columns.
        let mut krk = k_gain.clone();
        for (col, &rv) in r_diag.iter().enumerate() {
            krk.column_mut(col).mapv_inplace(|v| v * rv);
        }
        let mut p_new = i_kh.dot(&self.p_aug).dot(&i_kh.t()) + krk.dot(&k_gain.t());
        symmetrize(&mut p_new);

        if zeta_new.iter().any(|v| !v.is_finite()) || p_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(self.k));
        }
        let state = FilterState {
            zeta: zeta_new,
            p_aug: p_new,
            q_aug: self.q_aug.clone(),
            k: self.k,
            cadence_s: self.cadence_s,
            r,
            u_lags: self.u_lags.clone(),
            gate_sigma: self.gate_sigma,
        };
        let records = finish_records(&state);
        Ok((state, records))
    }

    /// No measurement this step: the prediction already propagated P, so the
    /// state passes through unchanged.
    pub fn skip_update(&self) -> FilterState<F> {
        self.clone()
    }
}
