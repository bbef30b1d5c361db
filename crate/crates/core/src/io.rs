//! File formats: CSV tables, 16-bit PGM heatmaps and the binary model dump.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading a
//! CSV back yields bit-identical values.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::annealer::TraceRecord;
use crate::error::{Error, Result};
use crate::forward::MeasurementSet;
use crate::hamiltonian::{HamiltonianModel, Kernel};
use crate::model::RoiGrid;

pub const MEASUREMENT_HEADER: [&str; 5] = ["pair", "src_x_mm", "det_x_mm", "phi_noisy", "phi_clean"];
pub const MAP_HEADER: [&str; 4] = ["cell", "x_mm", "y_mm", "delta_mu_a"];
pub const TRACE_HEADER: [&str; 4] = ["temp", "energy", "best_energy", "accept_rate"];

fn parse_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_err(path, format!("{other:?}")),
    }
}

fn write_table<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn read_table(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
    let found = r.headers().map_err(|e| parse_err(path, e.to_string()))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(path, format!("expected header {}", header.join(","))));
    }
    r.records()
        .map(|rec| rec.map_err(|e| parse_err(path, e.to_string())))
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, col: usize) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    rec.get(col)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(path, format!("line {line}, column {}: bad value", col + 1)))
}

/// One row of a measurement file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRow {
    pub pair: usize,
    pub src_x: f64,
    pub det_x: f64,
    pub phi_noisy: f64,
    pub phi_clean: f64,
}

pub fn write_measurements(path: &Path, m: &MeasurementSet) -> Result<()> {
    write_table(
        path,
        &MEASUREMENT_HEADER,
        (0..m.len()).map(|p| {
            vec![
                p.to_string(),
                m.source_x[p].to_string(),
                m.detector_x[p].to_string(),
                m.phi_noisy[p].to_string(),
                m.phi_clean[p].to_string(),
            ]
        }),
    )
}

pub fn read_measurements(path: &Path) -> Result<Vec<MeasurementRow>> {
    let rows = read_table(path, &MEASUREMENT_HEADER)?
        .iter()
        .map(|r| {
            Ok(MeasurementRow {
                pair: field(path, r, 0)?,
                src_x: field(path, r, 1)?,
                det_x: field(path, r, 2)?,
                phi_noisy: field(path, r, 3)?,
                phi_clean: field(path, r, 4)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for (k, r) in rows.iter().enumerate() {
        if r.pair != k {
            return Err(parse_err(path, format!("row {k} has pair index {}", r.pair)));
        }
    }
    Ok(rows)
}

pub fn write_map(path: &Path, grid: &RoiGrid, values: &[f64]) -> Result<()> {
    if values.len() != grid.n_cells() {
        return Err(Error::DimensionMismatch(format!(
            "map has {} values, grid {} cells",
            values.len(),
            grid.n_cells()
        )));
    }
    write_table(
        path,
        &MAP_HEADER,
        grid.centers.iter().zip(values).enumerate().map(|(i, (c, v))| {
            vec![i.to_string(), c.x.to_string(), c.y.to_string(), v.to_string()]
        }),
    )
}

/// Reads the value column of a map CSV, checking cell order.
pub fn read_map(path: &Path) -> Result<Vec<f64>> {
    read_table(path, &MAP_HEADER)?
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let cell: usize = field(path, r, 0)?;
            if cell != k {
                return Err(parse_err(path, format!("row {k} has cell index {cell}")));
            }
            field(path, r, 3)
        })
        .collect()
}

pub fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    write_table(
        path,
        &TRACE_HEADER,
        trace.iter().map(|t| {
            vec![
                t.temp.to_string(),
                t.energy.to_string(),
                t.best_energy.to_string(),
                t.accept_rate.to_string(),
            ]
        }),
    )
}

/// Range information from a PGM export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgmReport {
    pub min: f64,
    pub max: f64,
    pub clamped: usize,
}

/// Writes a binary 16-bit PGM (big-endian samples) mapping `[0, vmax]` to
/// `[0, 65535]`. Out-of-range values are clamped; when any are, a sidecar
/// `<path>.txt` records the true range.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64], vmax: f64) -> Result<PgmReport> {
    if values.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{} values for a {width}x{height} image",
            values.len()
        )));
    }
    if !(vmax > 0.0 && vmax.is_finite()) {
        return Err(Error::param("vmax", "must be finite and > 0"));
    }
    let mut report = PgmReport {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        clamped: 0,
    };
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{width} {height}\n65535\n")?;
    for &v in values {
        report.min = report.min.min(v);
        report.max = report.max.max(v);
        if !(0.0..=vmax).contains(&v) {
            report.clamped += 1;
        }
        let level = (v / vmax * 65535.0).round().clamp(0.0, 65535.0) as u16;
        out.write_all(&level.to_be_bytes())?;
    }
    out.flush()?;
    if report.clamped > 0 {
        let mut note = File::create(sidecar_path(path))?;
        writeln!(note, "display range: [0, {vmax}]")?;
        writeln!(note, "data min: {}", report.min)?;
        writeln!(note, "data max: {}", report.max)?;
        writeln!(note, "clamped cells: {}", report.clamped)?;
    }
    Ok(report)
}

pub fn sidecar_path(pgm: &Path) -> std::path::PathBuf {
    let mut s = pgm.as_os_str().to_os_string();
    s.push(".txt");
    s.into()
}

/// Decodes a 16-bit PGM written by [`write_pgm`]: `(width, height, samples)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(parse_err(path, "not a 16-bit binary PGM"));
    }
    let w: usize = fields[1].parse().map_err(|_| parse_err(path, "bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| parse_err(path, "bad height"))?;
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != 2 * w * h {
        return Err(parse_err(path, "pixel data length mismatch"));
    }
    Ok((w, h, body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}

const DUMP_MAGIC: &[u8; 8] = b"SPNHAM01";
const ENDIAN_TAG: u32 = 0x0102_0304;

/// Contents of a binary model dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDump {
    pub m: u32,
    pub alpha: f64,
    pub delta_mu_a_max: f64,
    pub offset: f64,
    pub k: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub h: DVector<f64>,
}

/// Writes `K`, `J` and `h` as little-endian binary. Layout:
///
/// ```text
/// magic     8 bytes  "SPNHAM01"
/// endian    u32      0x01020304
/// n_pairs   u64
/// n_cells   u64
/// m         u32
/// reserved  u32      0
/// alpha     f64
/// dmu_max   f64
/// offset    f64
/// K         n_pairs * n_cells f64, row-major
/// J         n_cells * n_cells f64, row-major
/// h         n_cells f64
/// ```
pub fn write_model_dump(path: &Path, kernel: &Kernel, model: &HamiltonianModel) -> Result<()> {
    let (np, nc) = (kernel.n_pairs(), kernel.n_cells());
    if model.n() != nc {
        return Err(Error::DimensionMismatch("kernel and model sizes differ".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(DUMP_MAGIC)?;
    out.write_all(&ENDIAN_TAG.to_le_bytes())?;
    out.write_all(&(np as u64).to_le_bytes())?;
    out.write_all(&(nc as u64).to_le_bytes())?;
    out.write_all(&model.m.to_le_bytes())?;
    out.write_all(&0u32.to_le_bytes())?;
    for v in [model.alpha, kernel.delta_mu_a_max, model.offset] {
        out.write_all(&v.to_le_bytes())?;
    }
    for r in 0..np {
        for c in 0..nc {
            out.write_all(&kernel.k[(r, c)].to_le_bytes())?;
        }
    }
    for r in 0..nc {
        for c in 0..nc {
            out.write_all(&model.j[(r, c)].to_le_bytes())?;
        }
    }
    for v in model.h.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_model_dump(path: &Path) -> Result<ModelDump> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(parse_err(path, "truncated model dump"));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(8)? != DUMP_MAGIC {
        return Err(parse_err(path, "bad magic"));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes"));
    let f64_at = |b: &[u8]| f64::from_le_bytes(b.try_into().expect("8 bytes"));
    if u32_at(take(4)?) != ENDIAN_TAG {
        return Err(parse_err(path, "unexpected byte order tag"));
    }
    let np = u64_at(take(8)?) as usize;
    let nc = u64_at(take(8)?) as usize;
    let m = u32_at(take(4)?);
    take(4)?;
    let alpha = f64_at(take(8)?);
    let delta_mu_a_max = f64_at(take(8)?);
    let offset = f64_at(take(8)?);
    let mut floats = |n: usize| -> Result<Vec<f64>> {
        Ok(take(8 * n)?.chunks_exact(8).map(f64_at).collect())
    };
    let k = DMatrix::from_row_slice(np, nc, &floats(np * nc)?);
    let j = DMatrix::from_row_slice(nc, nc, &floats(nc * nc)?);
    let h = DVector::from_vec(floats(nc)?);
    Ok(ModelDump {
        m,
        alpha,
        delta_mu_a_max,
        offset,
        k,
        j,
        h,
    })
}
