//! Dense matrix files: headered CSV or a small little-endian binary format.
//!
//! Binary layout: the 8-byte magic `SPADMTRX`, rows and cols as `u32` LE,
//! then `rows * cols` `f64` LE values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SPADMTRX";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

impl MatrixFormat {
    /// `.bin` selects binary, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => MatrixFormat::Binary,
            _ => MatrixFormat::Csv,
        }
    }
}

/// A matrix plus a 0/1 mask of the entries that were present in the file.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedMatrix {
    pub values: DMatrix<f64>,
    pub mask: DMatrix<f64>,
}

impl MaskedMatrix {
    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m == 1.0)
    }
}

/// Read a matrix, rejecting NaN or infinite entries.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let m = read_any(path)?;
    if let Some((i, j)) = first_non_finite(&m) {
        return Err(Error::Parse {
            context: path.display().to_string(),
            message: format!("non-finite value at row {i}, column {j}"),
        });
    }
    Ok(m)
}

/// Read a matrix where NaN, infinite or empty cells mark missing entries.
/// Missing values are replaced by zero and flagged in the mask.
pub fn read_matrix_masked(path: impl AsRef<Path>) -> Result<MaskedMatrix> {
    let raw = read_any(path.as_ref())?;
    let mask = raw.map(|v| if v.is_finite() { 1.0 } else { 0.0 });
    let values = raw.map(|v| if v.is_finite() { v } else { 0.0 });
    Ok(MaskedMatrix { values, mask })
}

fn read_any(path: &Path) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes, &path.display().to_string())
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
            context: path.display().to_string(),
            message: "file is neither binary matrix nor UTF-8 text".into(),
        })?;
        parse_csv(&text, &path.display().to_string())
    }
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .find(|&(i, j)| !m[(i, j)].is_finite())
}

fn parse_cell(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() {
        return Some(f64::NAN);
    }
    t.parse::<f64>().ok()
}

/// Parse CSV text into a matrix. A first line that does not parse as numbers
/// is treated as a header and skipped.
pub fn parse_csv(text: &str, context: &str) -> Result<DMatrix<f64>> {
    let parse_err = |message: String| Error::Parse { context: context.to_string(), message };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parsed: Option<Vec<f64>> = record.iter().map(parse_cell).collect();
        match parsed {
            Some(row) => rows.push(row),
            None if line == 0 => continue,
            None => {
                let bad = record.iter().find(|c| parse_cell(c).is_none()).unwrap_or_default();
                return Err(parse_err(format!("non-numeric cell {bad:?} on line {}", line + 1)));
            }
        }
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::dim(format!(
            "{context}: data row {} has {} columns, expected {ncols}",
            i + 1,
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn decode_binary(bytes: &[u8], context: &str) -> Result<DMatrix<f64>> {
    if bytes.len() < 16 {
        return Err(Error::Parse { context: context.into(), message: "truncated header".into() });
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != rows * cols * 8 {
        return Err(Error::dim(format!(
            "{context}: header says {rows}x{cols} but payload holds {} values",
            body.len() / 8
        )));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// CSV text with a `c0,c1,...` header. Values use the shortest
/// representation that parses back to the same bits.
pub fn to_csv_string(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("c{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn to_binary(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

/// Write with the format implied by the extension.
pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    write_matrix_as(path, m, MatrixFormat::from_path(path))
}

pub fn write_matrix_as(path: impl AsRef<Path>, m: &DMatrix<f64>, format: MatrixFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        MatrixFormat::Csv => to_csv_string(m).into_bytes(),
        MatrixFormat::Binary => to_binary(m),
    };
    write_bytes(path, &bytes)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_skipped() {
        let m = parse_csv("a,b\n1,2\n3,4\n", "t").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn headerless_csv() {
        let m = parse_csv("1,2\n3,4", "t").unwrap();
        assert_eq!(m.nrows(), 2);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(matches!(parse_csv("a,b\n1,2\n3\n", "t"), Err(Error::Dimension(_))));
    }

    #[test]
    fn bad_cell_rejected() {
        assert!(matches!(parse_csv("a,b\n1,x\n", "t"), Err(Error::Parse { .. })));
    }

    #[test]
    fn nan_needs_masked_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "a,b\n1,NaN\n,4\n").unwrap();
        assert!(read_matrix(&p).is_err());
        let mm = read_matrix_masked(&p).unwrap();
        assert_eq!(mm.mask, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(mm.values[(0, 1)], 0.0);
        assert!(!mm.is_complete());
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let m = DMatrix::from_fn(3, 5, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0));
        write_matrix(&p, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), m);
    }

    #[test]
    fn truncated_binary_rejected() {
        let mut bytes = to_binary(&DMatrix::from_element(2, 2, 1.0));
        bytes.truncate(bytes.len() - 3);
        assert!(decode_binary(&bytes, "t").is_err());
    }
}
