//! File formats.
//!
//! * Weights: dense CSV without header (one row per unit), or an edge list
//!   with header `i,j` or `i,j,w` (0-based indices, each undirected edge
//!   listed once, `w` defaulting to 1).
//! * Data: CSV with a header row of column names, numeric cells.
//! * Eigenbasis: little-endian binary container
//!   `"ESFB" | format_version: u32 | n: u64 | norm_factor: f64 |
//!   eigenvectors (column-major f64) | eigenvalues (f64)`,
//!   plus a JSON sidecar with the eigenvalues.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EsfError, Result};
use crate::weights::{EigenBasis, SpatialWeights};

pub const EIGENBASIS_MAGIC: &[u8; 4] = b"ESFB";
pub const EIGENBASIS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsFormat {
    Dense,
    EdgeList,
}

fn record_line(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn parse_cell(cell: &str, line: usize, what: &str) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| EsfError::Parse {
        line,
        message: format!("{what}: cannot parse '{}' as a number", cell.trim()),
    })
}

fn is_edge_header(record: &csv::StringRecord) -> bool {
    let fields: Vec<String> = record.iter().map(|f| f.trim().to_ascii_lowercase()).collect();
    fields == ["i", "j"] || fields == ["i", "j", "w"]
}

/// Read raw weights, detecting the format from the first line.
pub fn read_weights(path: &Path) -> Result<SpatialWeights> {
    let text = fs::read_to_string(path)?;
    parse_weights(&text).map(|(w, _)| w)
}

pub fn parse_weights(text: &str) -> Result<(SpatialWeights, WeightsFormat)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    let Some(first) = records.first() else {
        return Err(EsfError::Parse {
            line: 1,
            message: "empty weights file".into(),
        });
    };
    if is_edge_header(first) {
        Ok((parse_edge_list(&records[1..], first.len() == 3)?, WeightsFormat::EdgeList))
    } else {
        Ok((parse_dense(&records)?, WeightsFormat::Dense))
    }
}

fn parse_dense(records: &[csv::StringRecord]) -> Result<SpatialWeights> {
    let n = records.len();
    let mut values = DMatrix::zeros(n, n);
    for (i, record) in records.iter().enumerate() {
        let line = record_line(record);
        if record.len() != n {
            return Err(EsfError::Parse {
                line,
                message: format!("expected {n} columns in a dense {n}x{n} matrix, found {}", record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            values[(i, j)] = parse_cell(cell, line, &format!("entry ({i}, {j})"))?;
        }
    }
    SpatialWeights::from_dense(values)
}

fn parse_edge_list(records: &[csv::StringRecord], weighted: bool) -> Result<SpatialWeights> {
    let mut edges = Vec::with_capacity(records.len());
    let mut n = 0;
    for record in records {
        let line = record_line(record);
        let expected = if weighted { 3 } else { 2 };
        if record.len() != expected && !(weighted && record.len() == 2) {
            return Err(EsfError::Parse {
                line,
                message: format!("expected {expected} fields, found {}", record.len()),
            });
        }
        let index = |k: usize| -> Result<usize> {
            record[k].trim().parse::<usize>().map_err(|_| EsfError::Parse {
                line,
                message: format!("'{}' is not a non-negative integer index", record[k].trim()),
            })
        };
        let (i, j) = (index(0)?, index(1)?);
        let w = match record.get(2) {
            Some(cell) if !cell.trim().is_empty() => parse_cell(cell, line, "weight")?,
            _ => 1.0,
        };
        if i == j {
            return Err(EsfError::Parse {
                line,
                message: format!("self-loop on unit {i}"),
            });
        }
        n = n.max(i + 1).max(j + 1);
        edges.push((i, j, w, line));
    }
    if n == 0 {
        return Err(EsfError::Parse {
            line: 1,
            message: "edge list has no edges".into(),
        });
    }
    let mut values = DMatrix::zeros(n, n);
    for (i, j, w, line) in edges {
        if values[(i, j)] != 0.0 {
            return Err(EsfError::Parse {
                line,
                message: format!("edge ({i}, {j}) listed more than once"),
            });
        }
        values[(i, j)] = w;
        values[(j, i)] = w;
    }
    SpatialWeights::from_dense(values)
}

/// Write the (possibly normalized) weights matrix.
pub fn write_weights(path: &Path, w: &SpatialWeights, format: WeightsFormat) -> Result<()> {
    write_atomic(path, format_weights(w, format).as_bytes())
}

pub fn format_weights(w: &SpatialWeights, format: WeightsFormat) -> String {
    let m = w.values();
    let n = w.n();
    let mut out = String::new();
    match format {
        WeightsFormat::Dense => {
            for i in 0..n {
                let row: Vec<String> = (0..n).map(|j| m[(i, j)].to_string()).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        WeightsFormat::EdgeList => {
            out.push_str("i,j,w\n");
            for i in 0..n {
                for j in (i + 1)..n {
                    if m[(i, j)] != 0.0 {
                        out.push_str(&format!("{i},{j},{}\n", m[(i, j)]));
                    }
                }
            }
        }
    }
    out
}

/// Numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl DataTable {
    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<DVector<f64>> {
        let idx = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| {
                EsfError::InvalidInput(format!(
                    "column '{name}' not found (available: {})",
                    self.headers.join(", ")
                ))
            })?;
        Ok(DVector::from_vec(self.columns[idx].clone()))
    }

    pub fn matrix(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.nrows(), names.len());
        for (j, name) in names.iter().enumerate() {
            m.column_mut(j).copy_from(&self.column(name)?);
        }
        Ok(m)
    }
}

pub fn read_table(path: &Path) -> Result<DataTable> {
    let text = fs::read_to_string(path)?;
    parse_table(&text)
}

pub fn parse_table(text: &str) -> Result<DataTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(EsfError::Parse {
            line: 1,
            message: "missing header row".into(),
        });
    }
    let mut columns = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record?;
        let line = record_line(&record);
        for (j, cell) in record.iter().enumerate() {
            columns[j].push(parse_cell(cell, line, &format!("column '{}'", headers[j]))?);
        }
    }
    Ok(DataTable { headers, columns })
}

pub fn write_table(path: &Path, table: &DataTable) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(&table.headers)?;
    for i in 0..table.nrows() {
        writer.write_record(table.columns.iter().map(|c| c[i].to_string()))?;
    }
    let bytes = writer.into_inner().map_err(|e| e.into_error())?;
    write_atomic(path, &bytes)
}

/// JSON sidecar written next to a binary eigenbasis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSidecar {
    pub format_version: u32,
    pub n: usize,
    pub norm_factor: f64,
    pub eigenvalues: Vec<f64>,
}

impl EigenSidecar {
    pub fn of(basis: &EigenBasis) -> Self {
        Self {
            format_version: EIGENBASIS_FORMAT_VERSION,
            n: basis.n(),
            norm_factor: basis.source_norm_factor,
            eigenvalues: basis.values.iter().copied().collect(),
        }
    }
}

pub fn encode_eigenbasis(basis: &EigenBasis) -> Vec<u8> {
    let n = basis.n();
    let mut buf = Vec::with_capacity(24 + 8 * n * (n + 1));
    buf.extend_from_slice(EIGENBASIS_MAGIC);
    buf.extend_from_slice(&EIGENBASIS_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&basis.source_norm_factor.to_le_bytes());
    // nalgebra storage is column-major already
    for v in basis.vectors.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in basis.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_eigenbasis(bytes: &[u8]) -> Result<EigenBasis> {
    let bad = |msg: String| EsfError::InvalidInput(format!("eigenbasis container: {msg}"));
    if bytes.len() < 24 || &bytes[..4] != EIGENBASIS_MAGIC {
        return Err(bad("missing ESFB header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != EIGENBASIS_FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let norm_factor = f64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let expected = n
        .checked_mul(n + 1)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(24))
        .ok_or_else(|| bad(format!("implausible dimension {n}")))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for n = {n}, found {}",
            bytes.len()
        )));
    }
    let floats: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let vectors = DMatrix::from_column_slice(n, n, &floats[..n * n]);
    let values = DVector::from_column_slice(&floats[n * n..]);
    Ok(EigenBasis {
        vectors,
        values,
        source_norm_factor: norm_factor,
    })
}

pub fn write_eigenbasis(path: &Path, basis: &EigenBasis) -> Result<()> {
    write_atomic(path, &encode_eigenbasis(basis))
}

pub fn read_eigenbasis(path: &Path) -> Result<EigenBasis> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_eigenbasis(&bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Write to a temporary file in the same directory and rename into place,
/// so a failed write never leaves a truncated artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| EsfError::InvalidInput(format!("'{}' is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut out = BufWriter::new(fs::File::create(&tmp)?);
        out.write_all(bytes)?;
        out.flush()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_and_edge_list_agree() {
        let dense = "0,1,0\n1,0,2\n0,2,0\n";
        let edges = "i,j,w\n0,1\n1,2,2\n";
        let (a, fa) = parse_weights(dense).unwrap();
        let (b, fb) = parse_weights(edges).unwrap();
        assert_eq!(fa, WeightsFormat::Dense);
        assert_eq!(fb, WeightsFormat::EdgeList);
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_weights("0,1\n1,x\n") {
            Err(EsfError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_weights("i,j\n0,1\n1,-2\n") {
            Err(EsfError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_table("a,b\n1,2\n3,oops\n") {
            Err(EsfError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("'b'"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn weights_round_trip_through_text() {
        let (w, _) = parse_weights("0,1,0.5\n1,0,0\n0.5,0,0\n").unwrap();
        for format in [WeightsFormat::Dense, WeightsFormat::EdgeList] {
            let (back, _) = parse_weights(&format_weights(&w, format)).unwrap();
            assert_eq!(back.values(), w.values());
        }
    }

    #[test]
    fn eigenbasis_container_round_trip() {
        let basis = EigenBasis {
            vectors: DMatrix::from_column_slice(2, 2, &[0.6, 0.8, -0.8, 0.6]),
            values: DVector::from_vec(vec![1.0, -0.25]),
            source_norm_factor: 3.0,
        };
        let bytes = encode_eigenbasis(&basis);
        assert_eq!(&bytes[..4], b"ESFB");
        assert_eq!(bytes.len(), 24 + 8 * 6);
        let back = decode_eigenbasis(&bytes).unwrap();
        assert_eq!(back.vectors, basis.vectors);
        assert_eq!(back.values, basis.values);
        assert_eq!(back.source_norm_factor, 3.0);
        assert!(decode_eigenbasis(&bytes[..30]).is_err());
    }

    #[test]
    fn table_columns_by_name() {
        let t = parse_table("y, x1 ,x2\n1,2,3\n4,5,6\n").unwrap();
        assert_eq!(t.headers, vec!["y", "x1", "x2"]);
        assert_eq!(t.column("x2").unwrap().as_slice(), &[3.0, 6.0]);
        assert!(t.column("z").is_err());
        let m = t.matrix(&["x1".into(), "y".into()]).unwrap();
        assert_eq!(m[(1, 0)], 5.0);
    }
}
