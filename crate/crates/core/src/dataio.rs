//! Persistence and ingestion: the RDX1 array container, basis/model/snapshot
//! files, track and driver CSVs, and the raw-track preprocessing pipeline.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use chrono::NaiveDateTime;
use ndarray::{Array1, Array2, ArrayD, ArrayView2, Ix1, Ix2, IxDyn};

use crate::drivers::{epoch_base, DriverSeries};
use crate::error::{Error, Result};
use crate::features::LibrarySpec;
use crate::grid_obs::{GridSpec, TrackMeasurement};
use crate::ident::{ModelKind, RomModel};
use crate::latent::LatentBasis;
use crate::rng;
use crate::scalar::Real;

/// Container magic bytes.
pub const MAGIC: &[u8; 4] = b"RDX1";
/// Value of the `content` attribute in basis files.
pub const BASIS_CONTENT: &str = "latent_basis";
/// Value of the `content` attribute in model files.
pub const MODEL_CONTENT: &str = "rom_model";
/// Value of the `content` attribute in snapshot files.
pub const SNAPSHOT_CONTENT: &str = "density_snapshots";

/// Scalar attribute of a container entry.
#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    F64(f64),
    I64(i64),
    Str(String),
}

/// Self-describing array file: "RDX1" magic, little-endian u64 header
/// length, UTF-8 text header, then concatenated row-major f64 little-endian
/// blocks. The header has one line per entry: `array <name> f64le
/// <d0>x<d1>... @<byte offset>` or `attr <name> f64|i64|str <value>`.
/// Roundtrips are bit-identical.
#[derive(Debug, Clone, Default)]
pub struct Container {
    pub arrays: Vec<(String, ArrayD<f64>)>,
    pub attrs: Vec<(String, AttrValue)>,
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
        return Err(Error::InvalidValue(format!(
            "container entry name {name:?} must be nonempty without whitespace"
        )));
    }
    Ok(())
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn push_array(&mut self, name: &str, array: ArrayD<f64>) -> Result<()> {
        check_name(name)?;
        if array.ndim() == 0 {
            return Err(Error::InvalidValue(format!("array {name} has no dimensions")));
        }
        if self.arrays.iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidValue(format!("duplicate array name {name}")));
        }
        self.arrays.push((name.to_string(), array));
        Ok(())
    }

    pub fn push_attr(&mut self, name: &str, value: AttrValue) -> Result<()> {
        check_name(name)?;
        if let AttrValue::Str(s) = &value {
            if s.contains('\n') || s.contains('\r') {
                return Err(Error::InvalidValue(format!(
                    "string attribute {name} must be a single line"
                )));
            }
        }
        if self.attrs.iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidValue(format!("duplicate attribute name {name}")));
        }
        self.attrs.push((name.to_string(), value));
        Ok(())
    }

    pub fn array(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::MissingArray(name.to_string()))
    }

    pub fn array_2d(&self, name: &str) -> Result<Array2<f64>> {
        let arr = self.array(name)?;
        arr.view()
            .into_dimensionality::<Ix2>()
            .map(|v| v.to_owned())
            .map_err(|_| Error::BadHeader(format!("array {name} is not two-dimensional")))
    }

    pub fn array_1d(&self, name: &str) -> Result<Array1<f64>> {
        let arr = self.array(name)?;
        arr.view()
            .into_dimensionality::<Ix1>()
            .map(|v| v.to_owned())
            .map_err(|_| Error::BadHeader(format!("array {name} is not one-dimensional")))
    }

    fn attr(&self, name: &str) -> Result<&AttrValue> {
        self.attrs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::MissingAttr(name.to_string()))
    }

    pub fn attr_f64(&self, name: &str) -> Result<f64> {
        match self.attr(name)? {
            AttrValue::F64(v) => Ok(*v),
            AttrValue::I64(v) => Ok(*v as f64),
            AttrValue::Str(_) => Err(Error::BadHeader(format!("attribute {name} is not numeric"))),
        }
    }

    pub fn attr_i64(&self, name: &str) -> Result<i64> {
        match self.attr(name)? {
            AttrValue::I64(v) => Ok(*v),
            _ => Err(Error::BadHeader(format!("attribute {name} is not an integer"))),
        }
    }

    pub fn attr_str(&self, name: &str) -> Result<&str> {
        match self.attr(name)? {
            AttrValue::Str(v) => Ok(v),
            _ => Err(Error::BadHeader(format!("attribute {name} is not a string"))),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut header = String::new();
        let mut offset = 0u64;
        for (name, arr) in &self.arrays {
            let dims: Vec<String> = arr.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(header, "array {name} f64le {} @{offset}", dims.join("x"));
            offset += (arr.len() * 8) as u64;
        }
        for (name, value) in &self.attrs {
            match value {
                AttrValue::F64(v) => {
                    let _ = writeln!(header, "attr {name} f64 {v}");
                }
                AttrValue::I64(v) => {
                    let _ = writeln!(header, "attr {name} i64 {v}");
                }
                AttrValue::Str(v) => {
                    let _ = writeln!(header, "attr {name} str {v}");
                }
            }
        }
        let mut file = BufWriter::new(File::create(path)?);
        file.write_all(MAGIC)?;
        file.write_all(&(header.len() as u64).to_le_bytes())?;
        file.write_all(header.as_bytes())?;
        for (_, arr) in &self.arrays {
            for &v in arr.iter() {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        file.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 4 || &bytes[0..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < 12 {
            return Err(Error::TruncatedFile("missing header length".into()));
        }
        let header_len =
            u64::from_le_bytes(bytes[4..12].try_into().expect("8-byte slice")) as usize;
        if bytes.len() < 12 + header_len {
            return Err(Error::TruncatedFile(format!(
                "header wants {header_len} bytes, file holds {}",
                bytes.len() - 12
            )));
        }
        let header = std::str::from_utf8(&bytes[12..12 + header_len])
            .map_err(|_| Error::BadHeader("header is not UTF-8".into()))?;
        let data = &bytes[12 + header_len..];

        let mut out = Container::new();
        let mut spans: Vec<(u64, u64, String)> = Vec::new();
        for line in header.lines() {
            if line.is_empty() {
                continue;
            }
            let (kind, rest) = line
                .split_once(' ')
                .ok_or_else(|| Error::BadHeader(format!("malformed line {line:?}")))?;
            match kind {
                "array" => {
                    let parts: Vec<&str> = rest.split(' ').collect();
                    if parts.len() != 4 || parts[1] != "f64le" {
                        return Err(Error::BadHeader(format!("malformed array line {line:?}")));
                    }
                    let name = parts[0];
                    let dims: Vec<usize> = parts[2]
                        .split('x')
                        .map(|d| {
                            d.parse::<usize>()
                                .map_err(|_| Error::BadHeader(format!("bad shape in {line:?}")))
                        })
                        .collect::<Result<_>>()?;
                    let offset: u64 = parts[3]
                        .strip_prefix('@')
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::BadHeader(format!("bad offset in {line:?}")))?;
                    let len: usize = dims.iter().product();
                    let nbytes = len as u64 * 8;
                    let end = offset
                        .checked_add(nbytes)
                        .ok_or_else(|| Error::BadHeader(format!("offset overflow in {line:?}")))?;
                    if end > data.len() as u64 {
                        return Err(Error::TruncatedFile(format!(
                            "array {name} wants bytes {offset}..{end}, data section holds {}",
                            data.len()
                        )));
                    }
                    let mut values = Vec::with_capacity(len);
                    for chunk in data[offset as usize..end as usize].chunks_exact(8) {
                        values.push(f64::from_le_bytes(chunk.try_into().expect("8-byte chunk")));
                    }
                    let arr = ArrayD::from_shape_vec(IxDyn(&dims), values)
                        .map_err(|_| Error::BadHeader(format!("bad shape in {line:?}")))?;
                    spans.push((offset, end, name.to_string()));
                    out.push_array(name, arr)?;
                }
                "attr" => {
                    let mut it = rest.splitn(3, ' ');
                    let name = it
                        .next()
                        .ok_or_else(|| Error::BadHeader(format!("malformed attr line {line:?}")))?;
                    let ty = it
                        .next()
                        .ok_or_else(|| Error::BadHeader(format!("malformed attr line {line:?}")))?;
                    let raw = it.next().unwrap_or("");
                    let value = match ty {
                        "f64" => AttrValue::F64(raw.parse::<f64>().map_err(|_| {
                            Error::BadHeader(format!("bad f64 attribute in {line:?}"))
                        })?),
                        "i64" => AttrValue::I64(raw.parse::<i64>().map_err(|_| {
                            Error::BadHeader(format!("bad i64 attribute in {line:?}"))
                        })?),
                        "str" => AttrValue::Str(raw.to_string()),
                        _ => {
                            return Err(Error::BadHeader(format!(
                                "unknown attribute type {ty} in {line:?}"
                            )))
                        }
                    };
                    out.push_attr(name, value)?;
                }
                _ => return Err(Error::BadHeader(format!("unknown entry kind {kind:?}"))),
            }
        }

        spans.sort_by_key(|&(start, _, _)| start);
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(Error::OverlappingBlocks(format!(
                    "{} and {}",
                    pair[0].2, pair[1].2
                )));
            }
        }
        Ok(out)
    }

    /// Human-readable listing of arrays and attributes.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for (name, arr) in &self.arrays {
            let dims: Vec<String> = arr.shape().iter().map(|d| d.to_string()).collect();
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in arr.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if arr.is_empty() {
                let _ = writeln!(out, "array {name} [{}] (empty)", dims.join("x"));
            } else {
                let _ = writeln!(out, "array {name} [{}] min {lo:e} max {hi:e}", dims.join("x"));
            }
        }
        for (name, value) in &self.attrs {
            match value {
                AttrValue::F64(v) => {
                    let _ = writeln!(out, "attr {name} f64 {v}");
                }
                AttrValue::I64(v) => {
                    let _ = writeln!(out, "attr {name} i64 {v}");
                }
                AttrValue::Str(v) => {
                    let _ = writeln!(out, "attr {name} str {v}");
                }
            }
        }
        out
    }
}

fn push_grid_attrs<F: Real>(c: &mut Container, grid: &GridSpec<F>) -> Result<()> {
    c.push_attr("n_lt", AttrValue::I64(grid.n_lt as i64))?;
    c.push_attr("n_lat", AttrValue::I64(grid.n_lat as i64))?;
    c.push_attr("n_alt", AttrValue::I64(grid.n_alt as i64))?;
    c.push_attr("lt_period", AttrValue::F64(grid.lt_period.f64()))?;
    c.push_attr("lat_min", AttrValue::F64(grid.lat_min.f64()))?;
    c.push_attr("lat_max", AttrValue::F64(grid.lat_max.f64()))?;
    c.push_attr("alt_min", AttrValue::F64(grid.alt_min.f64()))?;
    c.push_attr("alt_max", AttrValue::F64(grid.alt_max.f64()))?;
    Ok(())
}

fn read_grid_attrs<F: Real>(c: &Container) -> Result<GridSpec<F>> {
    let grid = GridSpec {
        n_lt: c.attr_i64("n_lt")? as usize,
        n_lat: c.attr_i64("n_lat")? as usize,
        n_alt: c.attr_i64("n_alt")? as usize,
        lt_period: F::of(c.attr_f64("lt_period")?),
        lat_min: F::of(c.attr_f64("lat_min")?),
        lat_max: F::of(c.attr_f64("lat_max")?),
        alt_min: F::of(c.attr_f64("alt_min")?),
        alt_max: F::of(c.attr_f64("alt_max")?),
    };
    grid.validate()?;
    Ok(grid)
}

fn check_content(c: &Container, expected: &str) -> Result<()> {
    let found = c.attr_str("content")?;
    if found != expected {
        return Err(Error::BadHeader(format!(
            "file holds {found:?}, expected {expected:?}"
        )));
    }
    Ok(())
}

fn to_f64_2d<F: Real>(a: &Array2<F>) -> ArrayD<f64> {
    a.mapv(|v| v.f64()).into_dyn()
}

fn to_f64_1d<F: Real>(a: &Array1<F>) -> ArrayD<f64> {
    a.mapv(|v| v.f64()).into_dyn()
}

pub fn save_basis<F: Real>(path: impl AsRef<Path>, basis: &LatentBasis<F>) -> Result<()> {
    let mut c = Container::new();
    c.push_array("W", to_f64_2d(&basis.w))?;
    c.push_array("mu0", to_f64_1d(&basis.mu0))?;
    c.push_array(
        "explained",
        Array1::from_iter(basis.explained.iter().map(|v| v.f64())).into_dyn(),
    )?;
    c.push_attr("content", AttrValue::Str(BASIS_CONTENT.into()))?;
    c.push_attr("r", AttrValue::I64(basis.r as i64))?;
    c.push_attr("m", AttrValue::I64(basis.m as i64))?;
    push_grid_attrs(&mut c, &basis.grid)?;
    c.write(path)
}

pub fn load_basis<F: Real>(path: impl AsRef<Path>) -> Result<LatentBasis<F>> {
    let c = Container::read(path)?;
    check_content(&c, BASIS_CONTENT)?;
    let grid: GridSpec<F> = read_grid_attrs(&c)?;
    let r = c.attr_i64("r")? as usize;
    let m = c.attr_i64("m")? as usize;
    let w = c.array_2d("W")?.mapv(F::of);
    let mu0 = c.array_1d("mu0")?.mapv(F::of);
    let explained: Vec<F> = c.array_1d("explained")?.iter().map(|&v| F::of(v)).collect();
    if w.dim() != (grid.d(), r) || mu0.len() != grid.d() || explained.len() != r {
        return Err(Error::BadHeader(format!(
            "basis arrays disagree with r = {r}, d = {}",
            grid.d()
        )));
    }
    Ok(LatentBasis { w, mu0, r, grid, m, explained })
}

pub fn save_model<F: Real>(path: impl AsRef<Path>, model: &RomModel<F>) -> Result<()> {
    let canonical = match model.kind {
        ModelKind::SindycAr => LibrarySpec::nonlinear_only(model.r, model.n_u),
        ModelKind::Dmdc => LibrarySpec::empty(model.r, model.n_u),
    };
    if model.nl_spec != canonical {
        return Err(Error::InvalidValue(
            "model library is not the canonical enumeration and cannot be persisted".into(),
        ));
    }
    let mut c = Container::new();
    c.push_array("A", to_f64_2d(&model.a))?;
    c.push_array("B", to_f64_2d(&model.b))?;
    c.push_array("c", to_f64_1d(&model.c))?;
    c.push_array("Xi_nl", to_f64_2d(&model.xi_nl))?;
    for (j, a) in model.a_lags.iter().enumerate() {
        c.push_array(&format!("A_lag_{}", j + 1), to_f64_2d(a))?;
    }
    for (j, b) in model.b_lags.iter().enumerate() {
        c.push_array(&format!("B_lag_{}", j + 1), to_f64_2d(b))?;
    }
    c.push_array("scaler_mean", to_f64_1d(&model.scaler.mean))?;
    c.push_array("scaler_std", to_f64_1d(&model.scaler.std))?;
    c.push_array(
        "scaler_frozen",
        Array1::from_iter(model.scaler.frozen.iter().map(|&b| if b { 1.0 } else { 0.0 }))
            .into_dyn(),
    )?;
    c.push_array("q_hint", to_f64_2d(&model.q_hint))?;
    c.push_attr("content", AttrValue::Str(MODEL_CONTENT.into()))?;
    c.push_attr("kind", AttrValue::Str(model.kind.as_str().into()))?;
    c.push_attr("r", AttrValue::I64(model.r as i64))?;
    c.push_attr("n_u", AttrValue::I64(model.n_u as i64))?;
    c.push_attr("n_ar", AttrValue::I64(model.n_ar as i64))?;
    c.push_attr("lag_stride", AttrValue::I64(model.lag_stride as i64))?;
    c.push_attr("cadence_s", AttrValue::F64(model.cadence_s.f64()))?;
    c.push_attr("alpha", AttrValue::F64(model.alpha.f64()))?;
    c.write(path)
}

pub fn load_model<F: Real>(path: impl AsRef<Path>) -> Result<RomModel<F>> {
    let c = Container::read(path)?;
    check_content(&c, MODEL_CONTENT)?;
    let kind = ModelKind::parse(c.attr_str("kind")?)?;
    let r = c.attr_i64("r")? as usize;
    let n_u = c.attr_i64("n_u")? as usize;
    let n_ar = c.attr_i64("n_ar")? as usize;
    let lag_stride = c.attr_i64("lag_stride")? as usize;
    let cadence_s = F::of(c.attr_f64("cadence_s")?);
    let alpha = F::of(c.attr_f64("alpha")?);
    let nl_spec = match kind {
        ModelKind::SindycAr => LibrarySpec::nonlinear_only(r, n_u),
        ModelKind::Dmdc => LibrarySpec::empty(r, n_u),
    };
    let a = c.array_2d("A")?.mapv(F::of);
    let b = c.array_2d("B")?.mapv(F::of);
    let c_vec = c.array_1d("c")?.mapv(F::of);
    let xi_nl = c.array_2d("Xi_nl")?.mapv(F::of);
    let mut a_lags = Vec::with_capacity(n_ar);
    let mut b_lags = Vec::with_capacity(n_ar);
    for j in 1..=n_ar {
        a_lags.push(c.array_2d(&format!("A_lag_{j}"))?.mapv(F::of));
        b_lags.push(c.array_2d(&format!("B_lag_{j}"))?.mapv(F::of));
    }
    let scaler = crate::features::FeatureScaler {
        mean: c.array_1d("scaler_mean")?.mapv(F::of),
        std: c.array_1d("scaler_std")?.mapv(F::of),
        frozen: c.array_1d("scaler_frozen")?.iter().map(|&v| v != 0.0).collect(),
    };
    let q_hint = c.array_2d("q_hint")?.mapv(F::of);
    if a.dim() != (r, r)
        || b.dim() != (r, n_u)
        || c_vec.len() != r
        || xi_nl.dim() != (r, nl_spec.p())
        || scaler.p() != nl_spec.p()
        || scaler.frozen.len() != nl_spec.p()
        || q_hint.dim() != (r, r)
        || a_lags.iter().any(|m| m.dim() != (r, r))
        || b_lags.iter().any(|m| m.dim() != (r, n_u))
    {
        return Err(Error::BadHeader(format!(
            "model arrays disagree with r = {r}, n_u = {n_u}, n_ar = {n_ar}"
        )));
    }
    if lag_stride < 1 {
        return Err(Error::BadHeader("lag_stride must be at least 1".into()));
    }
    Ok(RomModel {
        kind,
        r,
        n_u,
        n_ar,
        cadence_s,
        lag_stride,
        a,
        a_lags,
        b,
        b_lags,
        c: c_vec,
        xi_nl,
        nl_spec,
        scaler,
        alpha,
        q_hint,
    })
}

/// Persists a snapshot series: linear densities as an m x d array (one row
/// per epoch) plus the grid metadata.
pub fn save_snapshots<F: Real>(
    path: impl AsRef<Path>,
    grid: &GridSpec<F>,
    epochs: &[i64],
    linear_density: ArrayView2<'_, F>,
) -> Result<()> {
    let (d, m) = linear_density.dim();
    if d != grid.d() {
        return Err(Error::DimensionMismatch(format!(
            "density has {d} rows, grid wants {}",
            grid.d()
        )));
    }
    if epochs.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{} epochs vs {m} snapshot columns",
            epochs.len()
        )));
    }
    let mut by_epoch = Array2::<f64>::zeros((m, d));
    for k in 0..m {
        for i in 0..d {
            by_epoch[(k, i)] = linear_density[(i, k)].f64();
        }
    }
    let mut c = Container::new();
    c.push_array("density", by_epoch.into_dyn())?;
    c.push_array(
        "epochs",
        Array1::from_iter(epochs.iter().map(|&e| e as f64)).into_dyn(),
    )?;
    c.push_attr("content", AttrValue::Str(SNAPSHOT_CONTENT.into()))?;
    push_grid_attrs(&mut c, grid)?;
    c.write(path)
}

/// Loads a snapshot series and converts to log10 density, d x m with one
/// column per epoch. Non-positive training densities are hard errors.
pub fn ingest_snapshots<F: Real>(
    path: impl AsRef<Path>,
    expected_grid: Option<&GridSpec<F>>,
) -> Result<(GridSpec<F>, Vec<i64>, Array2<F>)> {
    let c = Container::read(path)?;
    check_content(&c, SNAPSHOT_CONTENT)?;
    let grid: GridSpec<F> = read_grid_attrs(&c)?;
    if let Some(want) = expected_grid {
        let same = grid.n_lt == want.n_lt
            && grid.n_lat == want.n_lat
            && grid.n_alt == want.n_alt
            && grid.lt_period == want.lt_period
            && grid.lat_min == want.lat_min
            && grid.lat_max == want.lat_max
            && grid.alt_min == want.alt_min
            && grid.alt_max == want.alt_max;
        if !same {
            return Err(Error::GridMismatch(format!(
                "file grid {}x{}x{} differs from expected {}x{}x{}",
                grid.n_lt, grid.n_lat, grid.n_alt, want.n_lt, want.n_lat, want.n_alt
            )));
        }
    }
    let density = c.array_2d("density")?;
    let epochs_f = c.array_1d("epochs")?;
    let (m, d) = density.dim();
    if d != grid.d() {
        return Err(Error::GridMismatch(format!(
            "density rows have {d} cells, grid dims imply {}",
            grid.d()
        )));
    }
    if epochs_f.len() != m {
        return Err(Error::BadHeader(format!(
            "{} epochs vs {m} density rows",
            epochs_f.len()
        )));
    }
    let mut epochs = Vec::with_capacity(m);
    for &e in epochs_f.iter() {
        if !e.is_finite() || e.fract() != 0.0 || e.abs() >= 9.007_199_254_740_992e15 {
            return Err(Error::BadHeader(format!("epoch {e} is not an integer second")));
        }
        epochs.push(e as i64);
    }
    let mut logs = Array2::<F>::zeros((d, m));
    for k in 0..m {
        for i in 0..d {
            let v = density[(k, i)];
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NonPositiveTrainingDensity(k * d + i));
            }
            logs[(i, k)] = F::of(v.log10());
        }
    }
    Ok((grid, epochs, logs))
}

/// One track CSV row before preprocessing; density may still be negative or
/// non-finite here.
#[derive(Debug, Clone)]
pub struct RawMeasurementRow<F: Real> {
    pub epoch: i64,
    pub lat: F,
    pub lt: F,
    pub alt: F,
    pub rho: F,
    pub satellite_id: String,
}

/// Parses an epoch as integer seconds since 2000-01-01T00:00:00 UTC, RFC
/// 3339, or `YYYY-MM-DDTHH:MM:SS` (taken as UTC).
pub fn parse_epoch(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(s) {
        return Ok((t.naive_utc() - epoch_base()).num_seconds());
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Ok((t - epoch_base()).num_seconds());
    }
    Err(Error::InvalidValue(format!("unparseable epoch {s:?}")))
}

const TRACK_HEADER: [&str; 6] = [
    "epoch_utc",
    "lat_deg",
    "lt_hours",
    "alt_km",
    "density_kgm3",
    "satellite_id",
];

fn parse_field<F: Real>(raw: &str, name: &str, row: usize) -> Result<F> {
    raw.trim()
        .parse::<f64>()
        .map(F::of)
        .map_err(|_| Error::InvalidValue(format!("row {row}: unparseable {name} {raw:?}")))
}

pub fn read_track_csv<F: Real>(path: impl AsRef<Path>) -> Result<Vec<RawMeasurementRow<F>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != TRACK_HEADER {
        return Err(Error::BadHeader(format!(
            "track CSV header {:?}, expected {}",
            headers.iter().collect::<Vec<_>>().join(","),
            TRACK_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 6 {
            return Err(Error::BadHeader(format!("row {i} has {} fields", record.len())));
        }
        rows.push(RawMeasurementRow {
            epoch: parse_epoch(&record[0])?,
            lat: parse_field(&record[1], "lat_deg", i)?,
            lt: parse_field(&record[2], "lt_hours", i)?,
            alt: parse_field(&record[3], "alt_km", i)?,
            rho: parse_field(&record[4], "density_kgm3", i)?,
            satellite_id: record[5].to_string(),
        });
    }
    Ok(rows)
}

pub fn write_track_csv<F: Real>(
    path: impl AsRef<Path>,
    rows: &[RawMeasurementRow<F>],
) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{}", TRACK_HEADER.join(","))?;
    for row in rows {
        writeln!(
            file,
            "{},{},{},{},{:e},{}",
            row.epoch,
            row.lat.f64(),
            row.lt.f64(),
            row.alt.f64(),
            row.rho.f64(),
            row.satellite_id
        )?;
    }
    file.flush()?;
    Ok(())
}

const DRIVER_HEADER: [&str; 4] = ["epoch_utc", "f107", "f107_bar41", "kp"];

pub fn read_driver_csv<F: Real>(path: impl AsRef<Path>) -> Result<DriverSeries<F>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != DRIVER_HEADER {
        return Err(Error::BadHeader(format!(
            "driver CSV header {:?}, expected {}",
            headers.iter().collect::<Vec<_>>().join(","),
            DRIVER_HEADER.join(",")
        )));
    }
    let mut epochs = Vec::new();
    let mut f107 = Vec::new();
    let mut f107_bar41 = Vec::new();
    let mut kp = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 4 {
            return Err(Error::BadHeader(format!("row {i} has {} fields", record.len())));
        }
        epochs.push(parse_epoch(&record[0])?);
        f107.push(parse_field(&record[1], "f107", i)?);
        f107_bar41.push(parse_field(&record[2], "f107_bar41", i)?);
        kp.push(parse_field(&record[3], "kp", i)?);
    }
    DriverSeries::new(epochs, f107, f107_bar41, kp)
}

pub fn write_driver_csv<F: Real>(path: impl AsRef<Path>, series: &DriverSeries<F>) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{}", DRIVER_HEADER.join(","))?;
    for (i, &e) in series.epochs.iter().enumerate() {
        writeln!(
            file,
            "{},{},{},{}",
            e,
            series.f107[i].f64(),
            series.f107_bar41[i].f64(),
            series.kp[i].f64()
        )?;
    }
    file.flush()?;
    Ok(())
}

/// Knobs for raw-track preprocessing.
#[derive(Debug, Clone)]
pub struct PreprocessConfig<F: Real> {
    /// Filter step in seconds; epochs are rounded to its multiples.
    pub t2_s: i64,
    /// Relative measurement error bound feeding the noise-variance sampler.
    pub rel_err: F,
    pub n_mc: usize,
    pub seed: u64,
    /// Maximum |rounding shift| kept, in seconds; None means t2/2 (keep all).
    pub max_shift_s: Option<i64>,
}

/// Row accounting for one preprocessing pass. Input rows always equal kept
/// plus the four drop counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PreprocessReport {
    pub input_rows: usize,
    pub kept: usize,
    pub negatives_removed: usize,
    pub nonfinite_removed: usize,
    pub duplicates_dropped: usize,
    pub misaligned_dropped: usize,
}

impl PreprocessReport {
    pub fn conserved(&self) -> bool {
        self.input_rows
            == self.kept
                + self.negatives_removed
                + self.nonfinite_removed
                + self.duplicates_dropped
                + self.misaligned_dropped
    }
}

// Half-away-from-zero rounding to the nearest multiple of `step`.
fn round_to_multiple(epoch: i64, step: i64) -> i64 {
    let step = step as i128;
    let e = epoch as i128;
    let rounded = (2 * e.abs() + step) / (2 * step) * step;
    (if e < 0 { -rounded } else { rounded }) as i64
}

/// Cleans a raw track: sorts by epoch (stable), drops non-finite rows and
/// non-positive densities, rounds epochs to the nearest multiple of the
/// filter step (half away from zero), keeps the first row among rounding
/// collisions, and attaches the Monte Carlo log10 noise variance. The
/// variance seed derives from (seed, rounded epoch, satellite id), so a
/// second pass over the output reproduces it exactly.
pub fn preprocess_track<F: Real>(
    rows: &[RawMeasurementRow<F>],
    cfg: &PreprocessConfig<F>,
) -> Result<(Vec<TrackMeasurement<F>>, PreprocessReport)> {
    if cfg.t2_s <= 0 {
        return Err(Error::InvalidValue(format!(
            "filter step {} s must be positive",
            cfg.t2_s
        )));
    }
    let max_shift = cfg.max_shift_s.unwrap_or(cfg.t2_s / 2 + cfg.t2_s % 2);
    let mut sorted: Vec<&RawMeasurementRow<F>> = rows.iter().collect();
    sorted.sort_by_key(|row| row.epoch);

    let mut report = PreprocessReport {
        input_rows: rows.len(),
        ..PreprocessReport::default()
    };
    let mut out: Vec<TrackMeasurement<F>> = Vec::new();
    let mut last_epoch: Option<i64> = None;
    for row in sorted {
        if !row.lat.is_finite() || !row.lt.is_finite() || !row.alt.is_finite() || !row.rho.is_finite()
        {
            report.nonfinite_removed += 1;
            continue;
        }
        if row.rho <= F::zero() {
            report.negatives_removed += 1;
            continue;
        }
        let rounded = round_to_multiple(row.epoch, cfg.t2_s);
        if (rounded - row.epoch).abs() > max_shift {
            report.misaligned_dropped += 1;
            continue;
        }
        if last_epoch == Some(rounded) {
            report.duplicates_dropped += 1;
            continue;
        }
        let seed = rng::derive(cfg.seed, rounded as u64, rng::label_tag(&row.satellite_id));
        let sigma_v2 = crate::grid_obs::mc_noise_variance(row.rho, cfg.rel_err, cfg.n_mc, seed)?;
        out.push(TrackMeasurement {
            epoch: rounded,
            lat: row.lat,
            lt: row.lt,
            alt: row.alt,
            rho: row.rho,
            sigma_v2,
            satellite_id: row.satellite_id.clone(),
        });
        last_epoch = Some(rounded);
        report.kept += 1;
    }
    if out.is_empty() {
        return Err(Error::EmptyAfterPreprocessing);
    }
    Ok((out, report))
}

/// View of a preprocessed measurement as a raw row, for re-ingestion or CSV
/// export.
pub fn to_raw<F: Real>(m: &TrackMeasurement<F>) -> RawMeasurementRow<F> {
    RawMeasurementRow {
        epoch: m.epoch,
        lat: m.lat,
        lt: m.lt,
        alt: m.alt,
        rho: m.rho,
        satellite_id: m.satellite_id.clone(),
    }
}
