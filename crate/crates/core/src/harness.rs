//! Experiment orchestration: training from snapshot files, the 60 s
//! assimilation loop with its open-loop baseline, MAPE evaluation along
//! assimilated and withheld tracks, and plot-ready report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{self, PreprocessConfig, PreprocessReport};
use crate::drivers::N_DRIVERS;
use crate::synthtwin::{
    fly_orbit, generate_truth, measurements_to_rows, synthesize_measurements, DriverScenario,
    OrbitSpec, TwinSpec,
};
use crate::ekf::{init_filter, NoiseConfig, DEFAULT_P0, DEFAULT_Q1, DEFAULT_Q2, DEFAULT_SPIN_UP_S};
use crate::error::{Error, Result};
use crate::features::LibrarySpec;
use crate::grid_obs::{build_obs_operator, ObsOperator, TrackMeasurement, DEFAULT_N_MC, DEFAULT_REL_ERR};
use crate::ident::{fit_dmdc, fit_sindyc_ar, rescale_cadence, ModelKind, RegressionConfig, DEFAULT_ALPHA, DEFAULT_N_AR};
use crate::latent::{fit_basis, DEFAULT_RANK};
use crate::scalar::Real;

/// Default filter step in seconds.
pub const DEFAULT_T2_S: i64 = 60;
/// Smallest measurement variance fed to the filter; preprocessing can
/// produce exact zeros when the configured relative error is zero.
pub const SIGMA_V2_FLOOR: f64 = 1e-12;

/// Mean absolute percentage error of density estimates against positive
/// measurements, in percent.
pub fn mape<F: Real>(estimates: &[F], measurements: &[F]) -> Result<F> {
    if estimates.is_empty() {
        return Err(Error::EmptyInput);
    }
    if estimates.len() != measurements.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates vs {} measurements",
            estimates.len(),
            measurements.len()
        )));
    }
    let mut sum = F::zero();
    for (i, (&est, &meas)) in estimates.iter().zip(measurements).enumerate() {
        if !(meas > F::zero()) || !meas.is_finite() {
            return Err(Error::NonPositiveMeasurement(i));
        }
        sum += (est - meas).abs() / meas;
    }
    Ok(F::of(100.0) * sum / F::of(estimates.len() as f64))
}

fn default_rank() -> usize {
    DEFAULT_RANK
}
fn default_kind() -> String {
    ModelKind::SindycAr.as_str().to_string()
}
fn default_n_ar() -> usize {
    DEFAULT_N_AR
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_t2() -> i64 {
    DEFAULT_T2_S
}
fn default_spin_up() -> f64 {
    DEFAULT_SPIN_UP_S
}
fn default_q1() -> f64 {
    DEFAULT_Q1
}
fn default_q2() -> f64 {
    DEFAULT_Q2
}
fn default_p0() -> f64 {
    DEFAULT_P0
}
fn default_q_scale() -> f64 {
    1.0
}
fn default_rel_err() -> f64 {
    DEFAULT_REL_ERR
}
fn default_n_mc() -> usize {
    DEFAULT_N_MC
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

/// Training run: snapshot and driver inputs, output paths, and the model
/// hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub snapshots: PathBuf,
    pub drivers: PathBuf,
    pub out_basis: PathBuf,
    pub out_model: PathBuf,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default = "default_n_ar")]
    pub n_ar: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_json(path.as_ref())
    }

    pub fn validate(&self) -> Result<()> {
        require_file(&self.snapshots, "snapshot file")?;
        require_file(&self.drivers, "driver file")?;
        ModelKind::parse(&self.kind)?;
        if self.rank < 1 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("ridge strength {} must be positive", self.alpha)));
        }
        Ok(())
    }
}

fn de_epoch<'de, D>(deserializer: D) -> std::result::Result<i64, D::Error>
where
    D: serde::Deserializer<'de>,
{
    struct EpochVisitor;
    impl serde::de::Visitor<'_> for EpochVisitor {
        type Value = i64;
        fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            f.write_str("integer seconds or an ISO-8601 timestamp")
        }
        fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<i64, E> {
            Ok(v)
        }
        fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<i64, E> {
            i64::try_from(v).map_err(|_| E::custom("epoch out of range"))
        }
        fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<i64, E> {
            dataio::parse_epoch(v).map_err(|e| E::custom(e.to_string()))
        }
    }
    deserializer.deserialize_any(EpochVisitor)
}

/// Assimilation run: window, tracks, persisted artifacts, and filter knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(deserialize_with = "de_epoch")]
    pub start_epoch: i64,
    #[serde(deserialize_with = "de_epoch")]
    pub stop_epoch: i64,
    pub assimilate_tracks: Vec<PathBuf>,
    #[serde(default)]
    pub validate_tracks: Vec<PathBuf>,
    pub model: PathBuf,
    pub basis: PathBuf,
    pub drivers: PathBuf,
    /// Expected model kind; checked against the loaded model when set.
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default = "default_t2")]
    pub t2_s: i64,
    #[serde(default = "default_spin_up")]
    pub spin_up_s: f64,
    #[serde(default = "default_q1")]
    pub q1: f64,
    #[serde(default = "default_q2")]
    pub q2: f64,
    #[serde(default = "default_p0")]
    pub p0_diag: f64,
    #[serde(default = "default_q_scale")]
    pub q_scale: f64,
    #[serde(default = "default_rel_err")]
    pub rel_err: f64,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub gate_sigma: Option<f64>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_json(path.as_ref())
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_epoch >= self.stop_epoch {
            return Err(Error::Config(format!(
                "start epoch {} is not before stop epoch {}",
                self.start_epoch, self.stop_epoch
            )));
        }
        if self.t2_s <= 0 {
            return Err(Error::Config(format!("filter step {} s must be positive", self.t2_s)));
        }
        if (self.stop_epoch - self.start_epoch) % self.t2_s != 0 {
            return Err(Error::Config(format!(
                "window of {} s is not a multiple of the {} s filter step",
                self.stop_epoch - self.start_epoch,
                self.t2_s
            )));
        }
        if self.assimilate_tracks.is_empty() {
            return Err(Error::Config("at least one assimilated track is required".into()));
        }
        require_file(&self.model, "model file")?;
        require_file(&self.basis, "basis file")?;
        require_file(&self.drivers, "driver file")?;
        for p in self.assimilate_tracks.iter().chain(&self.validate_tracks) {
            require_file(p, "track file")?;
        }
        if let Some(kind) = &self.kind {
            ModelKind::parse(kind)?;
        }
        if !(self.spin_up_s >= 0.0) {
            return Err(Error::Config("spin-up must be nonnegative".into()));
        }
        for (name, v) in [("q1", self.q1), ("q2", self.q2), ("p0_diag", self.p0_diag)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} = {v} must be nonnegative")));
            }
        }
        if !(self.q_scale > 0.0) || !self.q_scale.is_finite() {
            return Err(Error::Config(format!("q_scale = {} must be positive", self.q_scale)));
        }
        if !(self.rel_err >= 0.0) || !self.rel_err.is_finite() {
            return Err(Error::Config(format!("rel_err = {} must be nonnegative", self.rel_err)));
        }
        if self.n_mc < 2 {
            return Err(Error::Config(format!("n_mc = {} must be at least 2", self.n_mc)));
        }
        if let Some(g) = self.gate_sigma {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::Config(format!("gate_sigma = {g} must be positive")));
            }
        }
        Ok(())
    }
}

/// One evaluated point along a track.
#[derive(Debug, Clone, Copy)]
pub struct ResidualRow {
    pub epoch: i64,
    pub rho_meas: f64,
    pub rho_assim: f64,
    pub rho_open: f64,
}

/// Per-track evaluation summary; MAPE is None when no points survive the
/// spin-up cut.
#[derive(Debug, Clone)]
pub struct TrackEval {
    pub satellite_id: String,
    pub role: String,
    pub mape_assim: Option<f64>,
    pub mape_open: Option<f64>,
    pub n_eval: usize,
    pub residuals: Vec<ResidualRow>,
}

/// One applied (or gated) scalar update.
#[derive(Debug, Clone)]
pub struct InnovationRow {
    pub epoch: i64,
    pub satellite_id: String,
    pub nu: f64,
    pub s: f64,
    pub gated: bool,
    pub positivity_ok: bool,
}

/// Whiteness summary over post-spin-up innovations.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct InnovationStats {
    pub count: usize,
    pub mean_nu: f64,
    /// Sample variance of nu / sqrt(S); near 1 for a consistent filter.
    pub normalized_variance: f64,
}

/// Full evaluation output of one assimilation run.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub tracks: Vec<TrackEval>,
    pub innovations: Vec<InnovationRow>,
    pub innovation_stats: Option<InnovationStats>,
    pub preprocess: Vec<(String, PreprocessReport)>,
    pub steps: usize,
    pub spin_up_steps: usize,
    pub config_json: String,
    pub config_sha256: String,
    pub version: String,
    pub seed: u64,
}

/// Filtered and open-loop latent histories plus the evaluation report.
#[derive(Debug, Clone)]
pub struct AssimilationOutput {
    pub epochs: Vec<i64>,
    /// r x (steps + 1), column k is the posterior at start + k steps.
    pub z_assim: Array2<f64>,
    /// Same layout for the never-updated baseline.
    pub z_open: Array2<f64>,
    pub report: EvalReport,
}

/// Fits the basis and the requested model kind on a snapshot file and
/// persists both.
pub fn run_train(cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    let kind = ModelKind::parse(&cfg.kind)?;
    let (grid, epochs, logs) = dataio::ingest_snapshots::<f64>(&cfg.snapshots, None)?;
    let m = epochs.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!("{m} snapshots cannot set a cadence")));
    }
    let cadence = epochs[1] - epochs[0];
    if cadence <= 0 || epochs.windows(2).any(|w| w[1] - w[0] != cadence) {
        return Err(Error::InvalidValue("snapshot epochs are not uniformly spaced".into()));
    }
    let basis = fit_basis(logs.view(), cfg.rank, grid)?;
    let latents = basis.project_series(logs.view())?;

    let series = dataio::read_driver_csv::<f64>(&cfg.drivers)?;
    let interp = series.interp()?;
    let mut u = Array2::<f64>::zeros((N_DRIVERS, m));
    for (k, &e) in epochs.iter().enumerate() {
        u.column_mut(k).assign(&interp.at(e)?.u);
    }

    let rcfg = RegressionConfig::with_alpha(cfg.alpha);
    let model = match kind {
        ModelKind::SindycAr => {
            let spec = LibrarySpec::full(cfg.rank, N_DRIVERS);
            fit_sindyc_ar(latents.view(), u.view(), cfg.n_ar, &spec, rcfg, cadence as f64)?
        }
        ModelKind::Dmdc => fit_dmdc(latents.view(), u.view(), rcfg, cadence as f64)?,
    };
    dataio::save_basis(&cfg.out_basis, &basis)?;
    dataio::save_model(&cfg.out_model, &model)?;
    Ok(())
}

struct TrackData {
    name: String,
    role: &'static str,
    meas: Vec<TrackMeasurement<f64>>,
}

struct Batch {
    ops: Vec<ObsOperator<f64>>,
    ys: Vec<f64>,
    sigmas: Vec<f64>,
    sats: Vec<String>,
}

/// Steps the filter over [start, stop] at the configured cadence, applying
/// all assimilated measurements at each grid epoch, and evaluates both the
/// filtered and the open-loop densities along every track.
pub fn run_assimilate(cfg: &ExperimentConfig) -> Result<AssimilationOutput> {
    cfg.validate()?;
    let basis = dataio::load_basis::<f64>(&cfg.basis)?;
    let model_t1 = dataio::load_model::<f64>(&cfg.model)?;
    if let Some(kind) = &cfg.kind {
        let want = ModelKind::parse(kind)?;
        if want != model_t1.kind {
            return Err(Error::Config(format!(
                "config wants a {} model, file holds {}",
                want.as_str(),
                model_t1.kind.as_str()
            )));
        }
    }
    if model_t1.r != basis.r {
        return Err(Error::Config(format!(
            "model rank {} disagrees with basis rank {}",
            model_t1.r, basis.r
        )));
    }
    let model = rescale_cadence(&model_t1, cfg.t2_s as f64)?;
    let series = dataio::read_driver_csv::<f64>(&cfg.drivers)?;
    let interp = series.interp()?;

    let pcfg = PreprocessConfig {
        t2_s: cfg.t2_s,
        rel_err: cfg.rel_err,
        n_mc: cfg.n_mc,
        seed: cfg.seed,
        max_shift_s: None,
    };
    let mut tracks: Vec<TrackData> = Vec::new();
    let mut preprocess: Vec<(String, PreprocessReport)> = Vec::new();
    let roles = cfg
        .assimilate_tracks
        .iter()
        .map(|p| (p, "assimilated"))
        .chain(cfg.validate_tracks.iter().map(|p| (p, "withheld")));
    for (path, role) in roles {
        let rows = dataio::read_track_csv::<f64>(path)?;
        let (meas, report) = dataio::preprocess_track(&rows, &pcfg)?;
        let name = meas[0].satellite_id.clone();
        preprocess.push((name.clone(), report));
        tracks.push(TrackData { name, role, meas });
    }

    let r = model.r;
    let mut q = Array2::<f64>::zeros((r, r));
    for i in 0..r {
        q[(i, i)] = if i < 2 { cfg.q1 } else { cfg.q2 };
    }
    let noise = NoiseConfig {
        q,
        p0: Array2::<f64>::eye(r) * cfg.p0_diag,
        spin_up_s: cfg.spin_up_s,
        q_scale: cfg.q_scale,
        gate_sigma: cfg.gate_sigma,
    };

    let mut schedule: BTreeMap<i64, Batch> = BTreeMap::new();
    for track in tracks.iter().filter(|t| t.role == "assimilated") {
        for m in &track.meas {
            if m.epoch <= cfg.start_epoch || m.epoch > cfg.stop_epoch {
                continue;
            }
            let op = build_obs_operator(&basis, m.lat, m.lt, m.alt)?;
            let batch = schedule.entry(m.epoch).or_insert_with(|| Batch {
                ops: Vec::new(),
                ys: Vec::new(),
                sigmas: Vec::new(),
                sats: Vec::new(),
            });
            batch.ops.push(op);
            batch.ys.push(m.rho.log10());
            batch.sigmas.push(m.sigma_v2.max(SIGMA_V2_FLOOR));
            batch.sats.push(m.satellite_id.clone());
        }
    }

    let steps = ((cfg.stop_epoch - cfg.start_epoch) / cfg.t2_s) as usize;
    let mut state = init_filter(&model, &noise)?;
    let mut open = init_filter(&model, &noise)?;
    let mut z_assim = Array2::<f64>::zeros((r, steps + 1));
    let mut z_open = Array2::<f64>::zeros((r, steps + 1));
    let mut epochs = Vec::with_capacity(steps + 1);
    epochs.push(cfg.start_epoch);
    let mut innovations: Vec<InnovationRow> = Vec::new();
    for k in 0..steps {
        let e_now = cfg.start_epoch + k as i64 * cfg.t2_s;
        let e_next = e_now + cfg.t2_s;
        let u = interp.at(e_now)?.u;
        state = state.predict(&model, u.view())?;
        open = open.predict(&model, u.view())?;
        if let Some(batch) = schedule.get(&e_next) {
            let (updated, records) = state.update_multi(&batch.ops, &batch.ys, &batch.sigmas)?;
            state = updated;
            for (rec, sat) in records.iter().zip(&batch.sats) {
                innovations.push(InnovationRow {
                    epoch: e_next,
                    satellite_id: sat.clone(),
                    nu: rec.nu,
                    s: rec.s,
                    gated: rec.gated,
                    positivity_ok: rec.positivity_ok,
                });
            }
        }
        let (z, _) = state.extract_current();
        z_assim.column_mut(k + 1).assign(&z);
        let (zo, _) = open.extract_current();
        z_open.column_mut(k + 1).assign(&zo);
        epochs.push(e_next);
    }

    let eval_start = cfg.start_epoch + cfg.spin_up_s.ceil() as i64;
    let spin_up_steps = ((cfg.spin_up_s / cfg.t2_s as f64).ceil() as usize).min(steps);
    let mut evals = Vec::with_capacity(tracks.len());
    for track in &tracks {
        let mut residuals = Vec::new();
        let mut est_assim = Vec::new();
        let mut est_open = Vec::new();
        let mut measured = Vec::new();
        for m in &track.meas {
            if m.epoch < eval_start || m.epoch < cfg.start_epoch || m.epoch > cfg.stop_epoch {
                continue;
            }
            let k = ((m.epoch - cfg.start_epoch) / cfg.t2_s) as usize;
            let op = build_obs_operator(&basis, m.lat, m.lt, m.alt)?;
            let rho_assim = op.linear_density(z_assim.column(k))?;
            let rho_open = op.linear_density(z_open.column(k))?;
            residuals.push(ResidualRow { epoch: m.epoch, rho_meas: m.rho, rho_assim, rho_open });
            est_assim.push(rho_assim);
            est_open.push(rho_open);
            measured.push(m.rho);
        }
        let (mape_assim, mape_open) = if measured.is_empty() {
            (None, None)
        } else {
            (
                Some(mape(&est_assim, &measured)?),
                Some(mape(&est_open, &measured)?),
            )
        };
        evals.push(TrackEval {
            satellite_id: track.name.clone(),
            role: track.role.to_string(),
            mape_assim,
            mape_open,
            n_eval: measured.len(),
            residuals,
        });
    }

    let post: Vec<&InnovationRow> = innovations
        .iter()
        .filter(|row| row.epoch >= eval_start && !row.gated)
        .collect();
    let innovation_stats = if post.len() >= 2 {
        let n = post.len() as f64;
        let mean_nu = post.iter().map(|r| r.nu).sum::<f64>() / n;
        let norm: Vec<f64> = post.iter().map(|r| r.nu / r.s.sqrt()).collect();
        let nm = norm.iter().sum::<f64>() / n;
        let var = norm.iter().map(|v| (v - nm).powi(2)).sum::<f64>() / (n - 1.0);
        Some(InnovationStats { count: post.len(), mean_nu, normalized_variance: var })
    } else {
        None
    };

    let config_value = serde_json::to_value(cfg)?;
    let config_json = serde_json::to_string_pretty(&config_value)?;
    let config_sha256 = hex(&Sha256::digest(config_json.as_bytes()));

    let report = EvalReport {
        tracks: evals,
        innovations,
        innovation_stats,
        preprocess,
        steps,
        spin_up_steps,
        config_json,
        config_sha256,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
    };
    Ok(AssimilationOutput { epochs, z_assim, z_open, report })
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(out, "{b:02x}");
    }
    out
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "nan".to_string(),
    }
}

/// Writes the report files: `mape_summary.csv` (two rows per track, one per
/// estimator), `residuals_<sat>.csv`, `innovations.csv`, gnuplot
/// `series_<sat>.dat`, and `config_resolved.json`. Reruns with the same
/// config are byte-identical; nothing here is timestamped.
pub fn emit_report(out: &AssimilationOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let report = &out.report;

    let mut summary = BufWriter::new(File::create(dir.join("mape_summary.csv"))?);
    writeln!(summary, "track,role,estimator,mape_percent,n_eval")?;
    for t in &report.tracks {
        writeln!(
            summary,
            "{},{},assimilated,{},{}",
            t.satellite_id,
            t.role,
            fmt_opt(t.mape_assim),
            t.n_eval
        )?;
        writeln!(
            summary,
            "{},{},open_loop,{},{}",
            t.satellite_id,
            t.role,
            fmt_opt(t.mape_open),
            t.n_eval
        )?;
    }
    summary.flush()?;

    for t in &report.tracks {
        let stem = sanitize(&t.satellite_id);
        let mut resid = BufWriter::new(File::create(dir.join(format!("residuals_{stem}.csv")))?);
        writeln!(resid, "epoch_utc,rho_meas_kgm3,rho_assim_kgm3,rho_open_kgm3")?;
        for row in &t.residuals {
            writeln!(resid, "{},{:e},{:e},{:e}", row.epoch, row.rho_meas, row.rho_assim, row.rho_open)?;
        }
        resid.flush()?;

        let mut series = BufWriter::new(File::create(dir.join(format!("series_{stem}.dat")))?);
        writeln!(series, "# epoch_s rho_meas rho_assim rho_open")?;
        for row in &t.residuals {
            writeln!(series, "{} {:e} {:e} {:e}", row.epoch, row.rho_meas, row.rho_assim, row.rho_open)?;
        }
        series.flush()?;
    }

    let mut innov = BufWriter::new(File::create(dir.join("innovations.csv"))?);
    writeln!(innov, "epoch_utc,satellite_id,nu_log10,s_log10,gated,positivity_ok")?;
    for row in &report.innovations {
        writeln!(
            innov,
            "{},{},{:e},{:e},{},{}",
            row.epoch,
            row.satellite_id,
            row.nu,
            row.s,
            u8::from(row.gated),
            u8::from(row.positivity_ok)
        )?;
    }
    innov.flush()?;

    let config: serde_json::Value = serde_json::from_str(&report.config_json)?;
    let preprocess: Vec<serde_json::Value> = report
        .preprocess
        .iter()
        .map(|(name, rep)| {
            serde_json::json!({
                "track": name,
                "input_rows": rep.input_rows,
                "kept": rep.kept,
                "negatives_removed": rep.negatives_removed,
                "nonfinite_removed": rep.nonfinite_removed,
                "duplicates_dropped": rep.duplicates_dropped,
                "misaligned_dropped": rep.misaligned_dropped,
            })
        })
        .collect();
    let resolved = serde_json::json!({
        "config": config,
        "config_sha256": report.config_sha256,
        "version": report.version,
        "seed": report.seed,
        "steps": report.steps,
        "spin_up_steps": report.spin_up_steps,
        "preprocess": preprocess,
        "innovations": report.innovation_stats,
    });
    let mut cfg_file = BufWriter::new(File::create(dir.join("config_resolved.json"))?);
    writeln!(cfg_file, "{}", serde_json::to_string_pretty(&resolved)?)?;
    cfg_file.flush()?;
    Ok(())
}

/// Knobs for the synthetic desk dataset.
#[derive(Debug, Clone)]
pub struct DeskOptions {
    pub seed: u64,
    pub hours: usize,
    pub scenario: DriverScenario,
    /// Relative half-width of the multiplicative measurement noise.
    pub rel_err: f64,
    /// Fraction of samples flipped negative to exercise preprocessing.
    pub negative_fraction: f64,
    pub t2_s: i64,
    /// Relative entrywise perturbation of the measured system against the
    /// trained one.
    pub perturb_frac: f64,
    /// Ridge strength written into the emitted training config. The desk
    /// twin has far fewer snapshots than an operational run, so the global
    /// default would shrink the dynamics to zero here.
    pub alpha: f64,
    /// Process-noise inflation written into the emitted experiment config,
    /// sized so the filter keeps tracking through the injected mismatch.
    pub q_scale: f64,
}

impl Default for DeskOptions {
    fn default() -> Self {
        DeskOptions {
            seed: 7,
            hours: 72,
            scenario: DriverScenario::Storm,
            rel_err: DEFAULT_REL_ERR,
            negative_fraction: 0.0,
            t2_s: DEFAULT_T2_S,
            perturb_frac: 0.10,
            alpha: 2e4,
            q_scale: 50.0,
        }
    }
}

/// Paths of a generated desk dataset.
#[derive(Debug, Clone)]
pub struct DeskDataset {
    pub snapshots: PathBuf,
    pub drivers: PathBuf,
    /// sat_a, sat_b, sat_c track files.
    pub tracks: Vec<PathBuf>,
    pub train_config: PathBuf,
    pub experiment_config: PathBuf,
    pub basis: PathBuf,
    pub model: PathBuf,
    pub report_dir: PathBuf,
    pub start_epoch: i64,
    pub stop_epoch: i64,
    pub rank: usize,
}

/// Writes a complete synthetic experiment into `dir`: training snapshots
/// from the base twin system, hourly drivers, three 60 s tracks sampled from
/// a perturbed copy of the system (sat_a and sat_b to assimilate, sat_c to
/// withhold), and ready-to-run train/experiment configs.
pub fn write_desk_dataset(dir: impl AsRef<Path>, opts: &DeskOptions) -> Result<DeskDataset> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    let mut base = TwinSpec::<f64>::storm_desk(opts.seed);
    base.hours = opts.hours;
    base.scenario = opts.scenario;
    let truth_train = generate_truth(&base)?;

    let snapshots = dir.join("snapshots.rdx1");
    dataio::save_snapshots(
        &snapshots,
        &truth_train.grid,
        &truth_train.epochs,
        truth_train.snapshots.view(),
    )?;
    let drivers = dir.join("drivers.csv");
    dataio::write_driver_csv(&drivers, &truth_train.drivers)?;

    let real_spec = base.perturbed(opts.perturb_frac, opts.seed.wrapping_add(1));
    let truth_real = generate_truth(&real_spec)?;

    let start_epoch = base.start_epoch;
    let stop_epoch = start_epoch + opts.hours as i64 * 3600;
    let epochs: Vec<i64> = (start_epoch..=stop_epoch).step_by(opts.t2_s as usize).collect();

    let orbits = [
        ("sat_a", OrbitSpec { alt_km: 475.0, inclination_deg: 87.35, period_min: 93.7, phase_rad: 0.0, node_lt_hours: 7.5, node_drift_h_per_day: 0.1 }),
        ("sat_b", OrbitSpec { alt_km: 510.0, inclination_deg: 92.0, period_min: 94.6, phase_rad: 2.1, node_lt_hours: 13.0, node_drift_h_per_day: -0.05 }),
        ("sat_c", OrbitSpec { alt_km: 450.0, inclination_deg: 96.7, period_min: 93.0, phase_rad: 4.0, node_lt_hours: 22.0, node_drift_h_per_day: 0.0 }),
    ];
    let mut tracks = Vec::with_capacity(orbits.len());
    for (i, (sat, orbit)) in orbits.iter().enumerate() {
        let positions = fly_orbit(orbit, &epochs)?;
        let meas = synthesize_measurements(
            &truth_real,
            &epochs,
            &positions,
            sat,
            opts.rel_err,
            DEFAULT_N_MC,
            crate::rng::derive(opts.seed, 1000 + i as u64, crate::rng::label_tag(sat)),
            opts.negative_fraction,
        )?;
        let path = dir.join(format!("{sat}.csv"));
        dataio::write_track_csv(&path, &measurements_to_rows(&meas))?;
        tracks.push(path);
    }

    let basis = dir.join("basis.rdx1");
    let model = dir.join("model.rdx1");
    let report_dir = dir.join("report");
    let train = TrainConfig {
        snapshots: snapshots.clone(),
        drivers: drivers.clone(),
        out_basis: basis.clone(),
        out_model: model.clone(),
        rank: base.r_true,
        kind: default_kind(),
        n_ar: default_n_ar(),
        alpha: opts.alpha,
    };
    let train_config = dir.join("train.json");
    std::fs::write(&train_config, serde_json::to_string_pretty(&train)?)?;

    let experiment = ExperimentConfig {
        start_epoch,
        stop_epoch,
        assimilate_tracks: vec![tracks[0].clone(), tracks[1].clone()],
        validate_tracks: vec![tracks[2].clone()],
        model: model.clone(),
        basis: basis.clone(),
        drivers: drivers.clone(),
        kind: None,
        t2_s: opts.t2_s,
        spin_up_s: default_spin_up(),
        q1: default_q1(),
        q2: default_q2(),
        p0_diag: default_p0(),
        q_scale: opts.q_scale,
        rel_err: opts.rel_err,
        n_mc: DEFAULT_N_MC,
        seed: opts.seed,
        gate_sigma: None,
        out_dir: report_dir.clone(),
    };
    let experiment_config = dir.join("experiment.json");
    std::fs::write(&experiment_config, serde_json::to_string_pretty(&experiment)?)?;

    Ok(DeskDataset {
        snapshots,
        drivers,
        tracks,
        train_config,
        experiment_config,
        basis,
        model,
        report_dir,
        start_epoch,
        stop_epoch,
        rank: base.r_true,
    })
}

/// Recomputed per-track MAPE from a report directory's residual files:
/// (track, assimilated MAPE, open-loop MAPE, points).
pub fn run_evaluate(dir: impl AsRef<Path>) -> Result<Vec<(String, f64, f64, usize)>> {
    let dir = dir.as_ref();
    let mut names: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let file_name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = file_name
            .strip_prefix("residuals_")
            .and_then(|s| s.strip_suffix(".csv"))
        {
            names.push((stem.to_string(), entry.path()));
        }
    }
    if names.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no residual files under {}",
            dir.display()
        )));
    }
    names.sort();
    let mut out = Vec::with_capacity(names.len());
    for (name, path) in names {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&path)?;
        let mut meas = Vec::new();
        let mut assim = Vec::new();
        let mut open = Vec::new();
        for record in rdr.records() {
            let record = record?;
            if record.len() != 4 {
                return Err(Error::BadHeader(format!(
                    "{}: residual rows want 4 fields",
                    path.display()
                )));
            }
            meas.push(record[1].parse::<f64>().map_err(|_| {
                Error::InvalidValue(format!("{}: bad rho_meas {:?}", path.display(), &record[1]))
            })?);
            assim.push(record[2].parse::<f64>().map_err(|_| {
                Error::InvalidValue(format!("{}: bad rho_assim {:?}", path.display(), &record[2]))
            })?);
            open.push(record[3].parse::<f64>().map_err(|_| {
                Error::InvalidValue(format!("{}: bad rho_open {:?}", path.display(), &record[3]))
            })?);
        }
        if meas.is_empty() {
            continue;
        }
        out.push((name, mape(&assim, &meas)?, mape(&open, &meas)?, meas.len()));
    }
    Ok(out)
}
