//! Model identification: one stacked ridge regression over current-state
//! library terms plus explicit state/driver lags, sliced into the linear,
//! lag, and sparse nonlinear operators; plus training-to-filter cadence
//! rescaling of the fitted operators.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::{Eig, Inverse};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::features::{eval_features, eval_raw, FeatureScaler, LibrarySpec, Term};
use crate::linalg::{cholesky, chol_solve};
use crate::scalar::{LapackReal, Real};

/// Default ridge strength for the full library fit.
pub const DEFAULT_ALPHA: f64 = 500_000.0;
/// Default autoregressive lag count (memory window in training steps).
pub const DEFAULT_N_AR: usize = 5;

// Eigenvalues within this distance of 1 take the analytic limit of
// (lambda^s - 1)/(lambda - 1) during cadence rescaling.
const UNIT_EIG_TOL: f64 = 1e-10;
// Acceptable imaginary residue of the real fractional power, relative to the
// max-abs norm of the operator.
const IMAG_RESIDUE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    SindycAr,
    Dmdc,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::SindycAr => "sindyc_ar",
            ModelKind::Dmdc => "dmdc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sindyc_ar" => Ok(ModelKind::SindycAr),
            "dmdc" => Ok(ModelKind::Dmdc),
            other => Err(Error::InvalidValue(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RegressionConfig<F: Real> {
    pub alpha: F,
    pub standardize: bool,
}

impl<F: Real> Default for RegressionConfig<F> {
    fn default() -> Self {
        RegressionConfig { alpha: F::of(DEFAULT_ALPHA), standardize: true }
    }
}

impl<F: Real> RegressionConfig<F> {
    pub fn with_alpha(alpha: F) -> Self {
        RegressionConfig { alpha, standardize: true }
    }
}

/// Identified latent dynamics at a fixed cadence:
/// z+ = A z + sum_j A_j z(-j) + B u + sum_j B_j u(-j) + Xi_nl phi_nl(z, u) + c.
///
/// Lags are spaced `lag_stride` filter steps apart (1 at the training
/// cadence; T1/T2 after rescaling, so a lag still means one training step).
/// `xi_nl` acts on the standardized nonlinear features defined by `nl_spec`
/// and `scaler`.
#[derive(Debug, Clone)]
pub struct RomModel<F: Real> {
    pub kind: ModelKind,
    pub r: usize,
    pub n_u: usize,
    pub n_ar: usize,
    /// Step length this model advances per application, seconds.
    pub cadence_s: F,
    /// Filter steps between lag samples.
    pub lag_stride: usize,
    pub a: Array2<F>,
    pub a_lags: Vec<Array2<F>>,
    pub b: Array2<F>,
    pub b_lags: Vec<Array2<F>>,
    pub c: Array1<F>,
    pub xi_nl: Array2<F>,
    pub nl_spec: LibrarySpec,
    pub scaler: FeatureScaler<F>,
    /// Ridge strength used at fit time.
    pub alpha: F,
    /// Training-residual covariance at the fit cadence (process-noise hint).
    pub q_hint: Array2<F>,
}

impl<F: Real> RomModel<F> {
    /// Augmented companion state length r (n_ar + 1).
    pub fn n_aug(&self) -> usize {
        self.r * (self.n_ar + 1)
    }

    /// One model step. `z_lags` and `u_lags` hold the lag-1..lag-n_ar values
    /// (newest first), each spaced one training step apart.
    pub fn one_step(
        &self,
        z: ArrayView1<'_, F>,
        z_lags: &[ArrayView1<'_, F>],
        u: ArrayView1<'_, F>,
        u_lags: &[ArrayView1<'_, F>],
    ) -> Result<Array1<F>> {
        if z.len() != self.r || u.len() != self.n_u {
            return Err(Error::DimensionMismatch(format!(
                "model wants r = {}, n_u = {}; got z of {} and u of {}",
                self.r,
                self.n_u,
                z.len(),
                u.len()
            )));
        }
        if z_lags.len() != self.n_ar || u_lags.len() != self.n_ar {
            return Err(Error::DimensionMismatch(format!(
                "model wants {} lags, got {} state and {} driver lags",
                self.n_ar,
                z_lags.len(),
                u_lags.len()
            )));
        }
        let mut next = self.a.dot(&z) + self.b.dot(&u) + &self.c;
        for j in 0..self.n_ar {
            next = next + self.a_lags[j].dot(&z_lags[j]) + self.b_lags[j].dot(&u_lags[j]);
        }
        if self.nl_spec.p() > 0 {
            let phi = eval_features(&self.nl_spec, &self.scaler, z, u)?;
            next = next + self.xi_nl.dot(&phi);
        }
        Ok(next)
    }
}

/// Ridge solution targets . regressors' (regressors . regressors' + alpha I)^-1
/// via Cholesky of the regularized normal matrix.
pub fn ridge_solve<F: Real>(
    targets: ArrayView2<'_, F>,
    regressors: ArrayView2<'_, F>,
    alpha: F,
) -> Result<Array2<F>> {
    let m = regressors.ncols();
    if targets.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "targets have {} columns, regressors {}",
            targets.ncols(),
            m
        )));
    }
    if m == 0 {
        return Err(Error::InsufficientData("regression needs at least one sample".into()));
    }
    if !(alpha > F::zero()) || !alpha.is_finite() {
        return Err(Error::InvalidValue(format!("ridge strength {alpha} must be positive")));
    }
    let q = regressors.nrows();
    let mut gram = regressors.dot(&regressors.t());
    for i in 0..q {
        gram[(i, i)] += alpha;
    }
    let l = cholesky(&gram)?;
    let rhs_t = regressors.dot(&targets.t()); // q x r
    Ok(chol_solve(&l, &rhs_t).t().to_owned())
}

// Stacked regressor layout: library terms first, then state lags (newest
// first), then driver lags.
struct Layout {
    p: usize,
    r: usize,
    n_u: usize,
    n_ar: usize,
}

impl Layout {
    fn q(&self) -> usize {
        self.p + self.n_ar * (self.r + self.n_u)
    }

    fn z_lag(&self, j: usize) -> usize {
        self.p + j * self.r
    }

    fn u_lag(&self, j: usize) -> usize {
        self.p + self.n_ar * self.r + j * self.n_u
    }
}

/// Fits the autoregressive sparse model by one stacked ridge regression of
/// z(k+1) on [library(z_k, u_k); z lags; u lags], then slices the coefficient
/// blocks into A, A_j, B, B_j, Xi_nl and the constant offset c.
///
/// `cadence_s` is the sampling step of the latent and driver series.
pub fn fit_sindyc_ar<F: Real>(
    latents: ArrayView2<'_, F>,
    drivers: ArrayView2<'_, F>,
    n_ar: usize,
    spec: &LibrarySpec,
    cfg: RegressionConfig<F>,
    cadence_s: F,
) -> Result<RomModel<F>> {
    let (r, m) = latents.dim();
    let n_u = drivers.nrows();
    if drivers.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} latent columns vs {} driver columns",
            m,
            drivers.ncols()
        )));
    }
    if spec.r != r || spec.n_u != n_u {
        return Err(Error::DimensionMismatch(format!(
            "library is for r = {}, n_u = {}; data has r = {r}, n_u = {n_u}",
            spec.r, spec.n_u
        )));
    }
    if m <= n_ar + 1 {
        return Err(Error::InsufficientData(format!(
            "fit needs more than n_ar + 1 = {} samples, got {m}",
            n_ar + 1
        )));
    }
    if latents.iter().any(|v| !v.is_finite()) || drivers.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training series".into()));
    }

    let layout = Layout { p: spec.p(), r, n_u, n_ar };
    let q = layout.q();
    let m_eff = m - 1 - n_ar;

    let mut theta = Array2::<F>::zeros((q, m_eff));
    let mut targets = Array2::<F>::zeros((r, m_eff));
    for (col, k) in (n_ar..m - 1).enumerate() {
        let phi = eval_raw(spec, latents.column(k), drivers.column(k))?;
        theta.slice_mut(s![..layout.p, col]).assign(&phi);
        for j in 0..n_ar {
            let zl = layout.z_lag(j);
            theta
                .slice_mut(s![zl..zl + r, col])
                .assign(&latents.column(k - 1 - j));
            let ul = layout.u_lag(j);
            theta
                .slice_mut(s![ul..ul + n_u, col])
                .assign(&drivers.column(k - 1 - j));
        }
        targets.column_mut(col).assign(&latents.column(k + 1));
    }

    // Standardize every regressor row except the bias, which keeps mean 0 and
    // std 1 so that it survives as the constant offset.
    let (mut mean, mut std, mut frozen) = if cfg.standardize {
        crate::features::standardize_stats(theta.view())
    } else {
        (
            Array1::zeros(q),
            Array1::ones(q),
            vec![false; q],
        )
    };
    if cfg.standardize {
        for (idx, term) in spec.terms.iter().enumerate() {
            if *term == Term::Bias {
                mean[idx] = F::zero();
                std[idx] = F::one();
                frozen[idx] = false;
            }
        }
        for i in 0..q {
            if frozen[i] {
                continue;
            }
            let mu = mean[i];
            let sd = std[i];
            theta.row_mut(i).mapv_inplace(|v| (v - mu) / sd);
        }
        for i in 0..q {
            if frozen[i] {
                theta.row_mut(i).fill(F::zero());
            }
        }
    }

    let mut coeff = ridge_solve(targets.view(), theta.view(), cfg.alpha)?;
    for i in 0..q {
        if frozen[i] {
            coeff.column_mut(i).fill(F::zero());
        }
    }

    // Training-residual covariance as a process-noise hint.
    let resid = &targets - &coeff.dot(&theta);
    let q_hint = if m_eff >= 2 {
        resid.dot(&resid.t()) / F::of((m_eff - 1) as f64)
    } else {
        Array2::zeros((r, r))
    };

    // Slice coefficient blocks, unfolding the standardization of linear and
    // lag regressors back to raw coordinates; nonlinear columns stay in
    // standardized feature space with their scaler entries carried along.
    let mut a = Array2::<F>::zeros((r, r));
    let mut b = Array2::<F>::zeros((r, n_u));
    let mut c = Array1::<F>::zeros(r);
    let mut a_lags = vec![Array2::<F>::zeros((r, r)); n_ar];
    let mut b_lags = vec![Array2::<F>::zeros((r, n_u)); n_ar];
    let mut nl_terms = Vec::new();
    let mut nl_indices = Vec::new();
    let mut nl_cols: Vec<Array1<F>> = Vec::new();

    let unfold_linear = |coeff_col: ArrayView1<'_, F>,
                             mu: F,
                             sd: F,
                             frz: bool,
                             dest: &mut ndarray::ArrayViewMut1<'_, F>,
                             c: &mut Array1<F>| {
        if frz {
            return;
        }
        for (row, &v) in coeff_col.iter().enumerate() {
            dest[row] = v / sd;
            c[row] -= v * mu / sd;
        }
    };

    for (idx, term) in spec.terms.iter().enumerate() {
        let col = coeff.column(idx);
        match *term {
            Term::Bias => {
                for row in 0..r {
                    c[row] += col[row];
                }
            }
            Term::Z(i) => {
                let mut dest = a.column_mut(i);
                unfold_linear(col, mean[idx], std[idx], frozen[idx], &mut dest, &mut c);
            }
            Term::U(k) => {
                let mut dest = b.column_mut(k);
                unfold_linear(col, mean[idx], std[idx], frozen[idx], &mut dest, &mut c);
            }
            Term::ZZ(_, _) | Term::UU(_, _) | Term::ZU(_, _) => {
                nl_terms.push(*term);
                nl_indices.push(idx);
                nl_cols.push(col.to_owned());
            }
        }
    }
    for j in 0..n_ar {
        for i in 0..r {
            let idx = layout.z_lag(j) + i;
            let col = coeff.column(idx);
            let mut dest = a_lags[j].column_mut(i);
            unfold_linear(col, mean[idx], std[idx], frozen[idx], &mut dest, &mut c);
        }
        for k in 0..n_u {
            let idx = layout.u_lag(j) + k;
            let col = coeff.column(idx);
            let mut dest = b_lags[j].column_mut(k);
            unfold_linear(col, mean[idx], std[idx], frozen[idx], &mut dest, &mut c);
        }
    }

    let p_nl = nl_cols.len();
    let mut xi_nl = Array2::<F>::zeros((r, p_nl));
    for (j, colv) in nl_cols.iter().enumerate() {
        xi_nl.column_mut(j).assign(colv);
    }
    let nl_spec = LibrarySpec { r, n_u, terms: nl_terms };
    let scaler = FeatureScaler {
        mean: nl_indices.iter().map(|&i| mean[i]).collect(),
        std: nl_indices.iter().map(|&i| std[i]).collect(),
        frozen: nl_indices.iter().map(|&i| frozen[i]).collect(),
    };

    Ok(RomModel {
        kind: ModelKind::SindycAr,
        r,
        n_u,
        n_ar,
        cadence_s,
        lag_stride: 1,
        a,
        a_lags,
        b,
        b_lags,
        c,
        xi_nl,
        nl_spec,
        scaler,
        alpha: cfg.alpha,
        q_hint,
    })
}

/// Linear baseline z+ = A z + B u + c: the stacked fit restricted to the
/// bias-plus-linear library with no lags.
pub fn fit_dmdc<F: Real>(
    latents: ArrayView2<'_, F>,
    drivers: ArrayView2<'_, F>,
    cfg: RegressionConfig<F>,
    cadence_s: F,
) -> Result<RomModel<F>> {
    let spec = LibrarySpec::linear(latents.nrows(), drivers.nrows());
    let mut model = fit_sindyc_ar(latents, drivers, 0, &spec, cfg, cadence_s)?;
    model.kind = ModelKind::Dmdc;
    Ok(model)
}

/// Rescales a model from its training cadence T1 to the filter cadence `t2`
/// (which must divide T1): A <- A^(t2/T1) through the principal branch of the
/// eigendecomposition, B <- (A_t2 - I)(A - I)^-1 B evaluated per eigenvalue
/// with the analytic limit at unit eigenvalues, and the lag, nonlinear, and
/// offset operators scaled by t2/T1 so that T1/t2 accumulated sub-steps
/// recompose one training step to first order. Lags keep their T1 spacing
/// through `lag_stride`.
pub fn rescale_cadence<F>(model: &RomModel<F>, t2: F) -> Result<RomModel<F>>
where
    F: LapackReal,
    Complex<F>: ndarray_linalg::Lapack + ndarray_linalg::Scalar<Real = F, Complex = Complex<F>>,
{
    if !(t2 > F::zero()) || !t2.is_finite() {
        return Err(Error::InvalidValue(format!("filter step {t2} must be positive")));
    }
    let ratio = model.cadence_s / t2;
    let steps_f = ratio.round();
    if steps_f < F::one() || num_traits::Float::abs(ratio - steps_f) > F::of(1e-9) * steps_f {
        return Err(Error::CadenceMismatch {
            cadence: model.cadence_s.f64(),
            t2: t2.f64(),
        });
    }
    let steps = steps_f.f64() as usize;
    if steps == 1 {
        return Ok(model.clone());
    }
    let s = F::one() / steps_f;

    let r = model.r;
    let (vals, vecs) = model
        .a
        .eig()
        .map_err(|e| Error::SingularSystem(format!("eigendecomposition of A failed: {e}")))?;
    for lam in vals.iter() {
        if lam.im == F::zero() && lam.re <= F::zero() {
            return Err(Error::NoRealPrincipalRoot(format!(
                "eigenvalue {} + {}i lies on the closed negative real axis",
                lam.re, lam.im
            )));
        }
    }
    let vinv = vecs
        .inv()
        .map_err(|e| Error::SingularSystem(format!("eigenvector matrix not invertible: {e}")))?;

    let unit_tol = F::of(UNIT_EIG_TOL);
    let one = Complex::new(F::one(), F::zero());
    let powers: Vec<Complex<F>> = vals.iter().map(|lam| lam.powf(s)).collect();
    let gains: Vec<Complex<F>> = vals
        .iter()
        .zip(&powers)
        .map(|(lam, pow)| {
            if (*lam - one).norm() < unit_tol {
                Complex::new(s, F::zero()) // limit of (lambda^s - 1)/(lambda - 1)
            } else {
                (*pow - one) / (*lam - one)
            }
        })
        .collect();

    let recompose = |diag: &[Complex<F>]| -> Array2<Complex<F>> {
        let mut scaled = vecs.clone();
        for (j, lam) in diag.iter().enumerate() {
            scaled.column_mut(j).mapv_inplace(|v| v * *lam);
        }
        scaled.dot(&vinv)
    };

    let a_pow_c = recompose(&powers);
    let gain_c = recompose(&gains);

    let a_norm = model
        .a
        .iter()
        .fold(F::zero(), |acc, v| acc.max(num_traits::Float::abs(*v)));
    let tol = F::of(IMAG_RESIDUE_TOL) * a_norm.max(F::one());
    let imag_max = a_pow_c
        .iter()
        .chain(gain_c.iter())
        .fold(F::zero(), |acc, v| acc.max(num_traits::Float::abs(v.im)));
    if imag_max > tol {
        return Err(Error::NoRealPrincipalRoot(format!(
            "imaginary residue {imag_max} exceeds {tol}"
        )));
    }

    let mut a_new = Array2::<F>::zeros((r, r));
    let mut gain = Array2::<F>::zeros((r, r));
    for i in 0..r {
        for j in 0..r {
            a_new[(i, j)] = a_pow_c[(i, j)].re;
            gain[(i, j)] = gain_c[(i, j)].re;
        }
    }
    let b_new = gain.dot(&model.b);

    let mut out = model.clone();
    out.a = a_new;
    out.b = b_new;
    out.c = model.c.mapv(|v| v * s);
    out.xi_nl = model.xi_nl.mapv(|v| v * s);
    out.a_lags = model.a_lags.iter().map(|mat| mat.mapv(|v| v * s)).collect();
    out.b_lags = model.b_lags.iter().map(|mat| mat.mapv(|v| v * s)).collect();
    out.cadence_s = t2;
    out.lag_stride = model.lag_stride * steps;
    Ok(out)
}
