//! File formats: map files, trained estimator files and CSV tables.
//!
//! A map file is a small text sidecar describing the image plus a raw
//! payload of row-major little-endian `f64` values, channels concatenated.
//! The layouts are documented in `docs/formats.md`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::estimator::{FeatureMap, KernelConfig, RffPerk};

const MAP_MAGIC: &str = "perk-map 1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Channel {
    pub name: String,
    pub unit: String,
}

impl Channel {
    pub fn new(name: &str, unit: &str) -> Self {
        Channel { name: name.to_string(), unit: unit.to_string() }
    }
}

/// A stack of equally sized 2-D images.
#[derive(Debug, Clone, PartialEq)]
pub struct MapFile {
    pub channels: Vec<Channel>,
    pub data: Vec<Array2<f64>>,
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), message: message.into() }
}

/// Payload path belonging to a sidecar: `x.map` → `x.map.bin`.
pub fn payload_path(sidecar: &Path) -> PathBuf {
    let mut s = sidecar.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

impl MapFile {
    pub fn new(channels: Vec<Channel>, data: Vec<Array2<f64>>) -> Result<Self> {
        Error::check_len(channels.len(), data.len())?;
        if let Some(first) = data.first() {
            if data.iter().any(|d| d.dim() != first.dim()) {
                return Err(Error::invalid("all channels of a map file must have the same shape"));
            }
        }
        for c in &channels {
            if c.name.is_empty() || c.name.contains(char::is_whitespace) || c.unit.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("channel names and units must be nonempty words: {c:?}")));
            }
        }
        Ok(MapFile { channels, data })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.first().map_or((0, 0), |d| d.dim())
    }

    pub fn channel(&self, name: &str) -> Result<&Array2<f64>> {
        self.channels
            .iter()
            .position(|c| c.name == name)
            .map(|i| &self.data[i])
            .ok_or_else(|| Error::invalid(format!("no channel named {name}")))
    }

    /// Writes the sidecar to `sidecar` and the payload next to it.
    pub fn write(&self, sidecar: &Path) -> Result<()> {
        let (rows, cols) = self.dims();
        let payload = payload_path(sidecar);
        let mut text = String::new();
        writeln!(text, "{MAP_MAGIC}").unwrap();
        writeln!(text, "rows {rows}").unwrap();
        writeln!(text, "cols {cols}").unwrap();
        writeln!(text, "dtype f64le").unwrap();
        writeln!(text, "payload {}", payload.file_name().unwrap().to_string_lossy()).unwrap();
        for c in &self.channels {
            let unit = if c.unit.is_empty() { "1" } else { &c.unit };
            writeln!(text, "channel {} {unit}", c.name).unwrap();
        }
        fs::write(sidecar, text)?;
        let mut out = BufWriter::new(fs::File::create(&payload)?);
        for img in &self.data {
            for v in img.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(sidecar: &Path) -> Result<Self> {
        let text = fs::read_to_string(sidecar)?;
        let mut lines = text.lines();
        if lines.next() != Some(MAP_MAGIC) {
            return Err(format_err(sidecar, format!("first line must be `{MAP_MAGIC}`")));
        }
        let (mut rows, mut cols, mut payload) = (None, None, None);
        let mut channels = Vec::new();
        for (no, line) in lines.enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || format_err(sidecar, format!("line {}: `{line}`", no + 2));
            match parts.as_slice() {
                [] => {}
                ["rows", v] => rows = Some(v.parse::<usize>().map_err(|_| bad())?),
                ["cols", v] => cols = Some(v.parse::<usize>().map_err(|_| bad())?),
                ["dtype", "f64le"] => {}
                ["dtype", other] => return Err(format_err(sidecar, format!("unsupported dtype {other}"))),
                ["payload", p] => payload = Some(p.to_string()),
                ["channel", name, unit] => channels.push(Channel::new(name, unit)),
                _ => return Err(bad()),
            }
        }
        let rows = rows.ok_or_else(|| format_err(sidecar, "missing rows"))?;
        let cols = cols.ok_or_else(|| format_err(sidecar, "missing cols"))?;
        let payload = match payload {
            Some(p) => sidecar.parent().unwrap_or(Path::new(".")).join(p),
            None => payload_path(sidecar),
        };
        let bytes = fs::read(&payload)?;
        let expected = rows * cols * channels.len() * 8;
        if bytes.len() != expected {
            return Err(format_err(&payload, format!("payload has {} bytes, expected {expected}", bytes.len())));
        }
        let mut values = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
        let data =
            (0..channels.len()).map(|_| Array2::from_shape_fn((rows, cols), |_| values.next().unwrap())).collect();
        MapFile::new(channels, data)
    }
}

/// Booleans stored as 0/1 channels.
pub fn mask_to_map(mask: &Array2<bool>) -> Array2<f64> {
    mask.mapv(|m| if m { 1.0 } else { 0.0 })
}

pub fn map_to_mask(map: &Array2<f64>) -> Array2<bool> {
    map.mapv(|v| v != 0.0)
}

const RFF_MAGIC: &[u8; 8] = b"PERKRFF\0";
const RFF_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, v: impl IntoIterator<Item = &'a f64>) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(format_err(self.path, "truncated estimator file"));
        }
        let (a, b) = self.bytes.split_at(n);
        self.bytes = b;
        Ok(a)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| format_err(self.path, "size does not fit in memory"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| format_err(self.path, "size overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
    }
}

/// Serializes a trained random-feature estimator.
///
/// Layout (little-endian): magic, version `u32`, then `Z, L, P, seed` as
/// `u64`, `λ, ρ` as `f64`, then the bandwidth (P), frequencies (Z×P), phases
/// (Z), `m_x` (L), `m_z` (Z) and weights (Z×L), all row-major `f64`.
pub fn encode_rff(est: &RffPerk) -> Vec<u8> {
    let fm = &est.features;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(RFF_MAGIC);
    w.u32(RFF_VERSION);
    w.u64(fm.n_features() as u64);
    w.u64(est.m_x.len() as u64);
    w.u64(fm.regressor_dim() as u64);
    w.u64(fm.seed);
    w.f64s(&[fm.kernel.lambda, est.rho]);
    w.f64s(&fm.kernel.bandwidth);
    w.f64s(fm.freqs.iter());
    w.f64s(fm.phases.iter());
    w.f64s(est.m_x.iter());
    w.f64s(est.m_z.iter());
    w.f64s(est.weights.iter());
    w.0
}

pub fn decode_rff(bytes: &[u8], path: &Path) -> Result<RffPerk> {
    let mut r = Reader { bytes, path };
    if r.take(8)? != RFF_MAGIC {
        return Err(format_err(path, "not an estimator file"));
    }
    let version = r.u32()?;
    if version != RFF_VERSION {
        return Err(format_err(path, format!("unsupported estimator file version {version}")));
    }
    let z = r.usize()?;
    let l = r.usize()?;
    let p = r.usize()?;
    let seed = r.u64()?;
    let lambda = r.f64()?;
    let rho = r.f64()?;
    let size = |a: usize, b: usize| a.checked_mul(b).ok_or_else(|| format_err(path, "size overflow"));
    let (zp, zl) = (size(z, p)?, size(z, l)?);
    let bandwidth = r.f64s(p)?;
    let freqs = Array2::from_shape_vec((z, p), r.f64s(zp)?).expect("shape");
    let phases = Array1::from(r.f64s(z)?);
    let m_x = Array1::from(r.f64s(l)?);
    let m_z = Array1::from(r.f64s(z)?);
    let weights = Array2::from_shape_vec((z, l), r.f64s(zl)?).expect("shape");
    if !r.bytes.is_empty() {
        return Err(format_err(path, "trailing bytes after estimator"));
    }
    let kernel = KernelConfig::new(lambda, bandwidth).map_err(|e| format_err(path, e.to_string()))?;
    Ok(RffPerk { features: FeatureMap { freqs, phases, kernel, seed }, m_x, m_z, weights, rho })
}

pub fn write_rff(est: &RffPerk, path: &Path) -> Result<()> {
    fs::write(path, encode_rff(est))?;
    Ok(())
}

pub fn read_rff(path: &Path) -> Result<RffPerk> {
    decode_rff(&fs::read(path)?, path)
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Minimal CSV writer: a header row, then rows of preformatted cells.
pub struct CsvWriter {
    out: BufWriter<fs::File>,
    width: usize,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        Ok(CsvWriter { out, width: header.len() })
    }

    pub fn row(&mut self, cells: &[String]) -> Result<()> {
        Error::check_len(self.width, cells.len())?;
        writeln!(self.out, "{}", cells.join(","))?;
        Ok(())
    }

    pub fn numbers(&mut self, values: &[f64]) -> Result<()> {
        let cells: Vec<String> = values.iter().map(|v| fmt_f64(*v)).collect();
        self.row(&cells)
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
