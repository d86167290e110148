//! Matrix files: the binary `OIMX` container and a plain CSV export.
//!
//! `OIMX` layout (little-endian): magic `b"OIMX"`, version `u32`, rows `u64`,
//! cols `u64`, then `rows * cols` `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OIMX";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    #[default]
    Bin,
    Csv,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Bin => "oimx",
            MatrixFormat::Csv => "csv",
        }
    }

    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Bin,
        }
    }
}

impl std::str::FromStr for MatrixFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bin" => Ok(MatrixFormat::Bin),
            "csv" => Ok(MatrixFormat::Csv),
            _ => Err(Error::Config(format!("unknown matrix format '{s}' (bin or csv)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixHeader {
    pub version: u32,
    pub rows: usize,
    pub cols: usize,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// `dir/name.<ext>` for the given format.
pub fn matrix_path(dir: &Path, name: &str, format: MatrixFormat) -> PathBuf {
    dir.join(format!("{name}.{}", format.extension()))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, format: MatrixFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        MatrixFormat::Bin => write_oimx(&mut w, m),
        MatrixFormat::Csv => write_csv(&mut w, m),
    };
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn write_oimx(w: &mut impl Write, m: &DMatrix<f64>) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    let mut row = Vec::with_capacity(8 * m.ncols());
    for i in 0..m.nrows() {
        row.clear();
        for j in 0..m.ncols() {
            row.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
        w.write_all(&row)?;
    }
    Ok(())
}

fn write_csv(w: &mut impl Write, m: &DMatrix<f64>) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    match MatrixFormat::from_path(path) {
        MatrixFormat::Bin => read_oimx(path),
        MatrixFormat::Csv => read_csv(path),
    }
}

pub fn read_header(path: &Path) -> Result<MatrixHeader> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = [0u8; HEADER_LEN];
    f.read_exact(&mut buf)
        .map_err(|_| format_err(path, "file shorter than the OIMX header"))?;
    parse_header(path, &buf)
}

fn parse_header(path: &Path, buf: &[u8; HEADER_LEN]) -> Result<MatrixHeader> {
    if &buf[0..4] != MAGIC {
        return Err(format_err(path, "missing OIMX magic bytes"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(format_err(path, format!("unsupported OIMX version {version}")));
    }
    let rows = u64::from_le_bytes(buf[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(buf[16..24].try_into().unwrap());
    let rows = usize::try_from(rows).map_err(|_| format_err(path, "row count too large"))?;
    let cols = usize::try_from(cols).map_err(|_| format_err(path, "column count too large"))?;
    Ok(MatrixHeader { version, rows, cols })
}

fn read_oimx(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let expected_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::new(file);
    let mut buf = [0u8; HEADER_LEN];
    r.read_exact(&mut buf)
        .map_err(|_| format_err(path, "file shorter than the OIMX header"))?;
    let h = parse_header(path, &buf)?;
    let count = h
        .rows
        .checked_mul(h.cols)
        .ok_or_else(|| format_err(path, "matrix size overflows"))?;
    if expected_len != (HEADER_LEN + 8 * count) as u64 {
        return Err(format_err(
            path,
            format!("{}x{} payload needs {} bytes, file has {}", h.rows, h.cols, HEADER_LEN + 8 * count, expected_len),
        ));
    }
    let mut m = DMatrix::zeros(h.rows, h.cols);
    let mut row = vec![0u8; 8 * h.cols];
    for i in 0..h.rows {
        r.read_exact(&mut row).map_err(|e| Error::io(path, e))?;
        for j in 0..h.cols {
            m[(i, j)] = f64::from_le_bytes(row[8 * j..8 * j + 8].try_into().unwrap());
        }
    }
    Ok(m)
}

fn read_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format_err(path, format!("line {}: {e}", ln + 1)))?;
        if let Some(first) = rows.first() {
            if first.len() != vals.len() {
                return Err(format_err(path, format!("line {} has {} fields, expected {}", ln + 1, vals.len(), first.len())));
            }
        }
        rows.push(vals);
    }
    let cols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}
