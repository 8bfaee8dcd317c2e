//! Grid persistence.
//!
//! FGRID layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `FGRD` |
//! | 4 | `u32` version = 1 |
//! | 4 | `u32` rows |
//! | 4 | `u32` cols |
//! | 8 | `f64` cell size (km) |
//! | 8 | `f64` origin latitude |
//! | 8 | `f64` origin longitude |
//! | 4 | `f32` nodata = −9999 |
//! | 4·rows·cols | `f32` values, row-major |
//!
//! The CSV form is a `row,col,value` header followed by one line per cell,
//! with the nodata sentinel for invalid cells.

use std::fs;
use std::path::Path;

use super::{GeoRef, Grid};
use crate::error::{Result, SrrmError};
use crate::scalar::Scalar;

pub const FGRID_MAGIC: &[u8; 4] = b"FGRD";
pub const FGRID_VERSION: u32 = 1;
pub const NODATA: f32 = -9999.0;
const HEADER_LEN: usize = 44;

/// Serializes a grid into FGRID bytes. Values are narrowed to `f32`.
pub fn encode_fgrid<T: Scalar>(grid: &Grid<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * grid.len());
    out.extend_from_slice(FGRID_MAGIC);
    out.extend_from_slice(&FGRID_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.cols() as u32).to_le_bytes());
    let geo = grid.geo();
    out.extend_from_slice(&geo.cell_size_km.to_le_bytes());
    out.extend_from_slice(&geo.origin_lat.to_le_bytes());
    out.extend_from_slice(&geo.origin_lon.to_le_bytes());
    out.extend_from_slice(&NODATA.to_le_bytes());
    for (v, m) in grid.values().iter().zip(grid.mask().iter()) {
        let x = if *m { v.to_f32().unwrap_or(NODATA) } else { NODATA };
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn le_f64(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

fn le_f32(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

/// Parses FGRID bytes. `origin` names the source in error messages.
pub fn decode_fgrid<T: Scalar>(bytes: &[u8], origin: &Path) -> Result<Grid<T>> {
    if bytes.len() < HEADER_LEN {
        return Err(SrrmError::format(origin, "truncated FGRID header"));
    }
    if &bytes[0..4] != FGRID_MAGIC {
        return Err(SrrmError::format(origin, "bad magic, expected FGRD"));
    }
    let version = le_u32(bytes, 4);
    if version != FGRID_VERSION {
        return Err(SrrmError::format(
            origin,
            format!("unsupported FGRID version {version}"),
        ));
    }
    let rows = le_u32(bytes, 8) as usize;
    let cols = le_u32(bytes, 12) as usize;
    let geo = GeoRef::new(le_f64(bytes, 16), le_f64(bytes, 24), le_f64(bytes, 32))
        .map_err(|e| SrrmError::format(origin, e.to_string()))?;
    let nodata = le_f32(bytes, 40);
    let expected = HEADER_LEN + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(SrrmError::format(
            origin,
            format!(
                "expected {expected} bytes for {rows}x{cols} grid, found {}",
                bytes.len()
            ),
        ));
    }
    let data = (0..rows * cols)
        .map(|i| {
            let v = le_f32(bytes, HEADER_LEN + 4 * i);
            if v == nodata || !v.is_finite() {
                T::nan()
            } else {
                T::of(v as f64)
            }
        })
        .collect();
    Grid::from_vec(rows, cols, data, geo)
}

pub fn write_fgrid<T: Scalar>(grid: &Grid<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_fgrid(grid)).map_err(|e| SrrmError::io(path, e))
}

pub fn read_fgrid<T: Scalar>(path: impl AsRef<Path>) -> Result<Grid<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SrrmError::io(path, e))?;
    decode_fgrid(&bytes, path)
}

/// Writes `row,col,value` lines for every cell.
pub fn write_csv<T: Scalar>(grid: &Grid<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| SrrmError::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["row", "col", "value"]).map_err(csv_err)?;
    for ((r, c), v) in grid.values().indexed_iter() {
        let value = if grid.is_valid(r, c) { v.as_f64() } else { NODATA as f64 };
        w.write_record([r.to_string(), c.to_string(), value.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| SrrmError::io(path, e))
}

/// Reads a `row,col,value` CSV. The grid extent is the largest listed index;
/// unlisted cells and sentinel values are invalid.
pub fn read_csv<T: Scalar>(path: impl AsRef<Path>, geo: GeoRef) -> Result<Grid<T>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| SrrmError::format(path, e.to_string()))?;
    let mut cells = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SrrmError::format(path, e.to_string()))?;
        let bad = || SrrmError::format(path, format!("malformed record on data line {}", line + 1));
        if rec.len() != 3 {
            return Err(bad());
        }
        let r: usize = rec[0].trim().parse().map_err(|_| bad())?;
        let c: usize = rec[1].trim().parse().map_err(|_| bad())?;
        let v: f64 = rec[2].trim().parse().map_err(|_| bad())?;
        cells.push((r, c, v));
    }
    let rows = cells.iter().map(|x| x.0 + 1).max().unwrap_or(0);
    let cols = cells.iter().map(|x| x.1 + 1).max().unwrap_or(0);
    let mut grid = Grid::empty(rows, cols, geo);
    for (r, c, v) in cells {
        if v != NODATA as f64 {
            grid.set(r, c, T::of(v));
        }
    }
    Ok(grid)
}
