//! Dense row-major feature matrices and their on-disk formats.
//!
//! Two formats are supported, chosen by file extension:
//!
//! - `.csv`: a header row of column names followed by one row per sample.
//!   Lines starting with `#` are comments.
//! - `.bin`: magic `SSFM`, a little-endian `u32` version, `u64` rows, `u64`
//!   columns, then `rows * cols` little-endian `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const BIN_MAGIC: &[u8; 4] = b"SSFM";
const BIN_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally sized rows. An empty input yields a 0×0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: other.cols,
            });
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn write_csv(&self, path: &Path, header: &[String]) -> Result<()> {
        if header.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: header.len(),
            });
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "{}", header.join(",")).map_err(io)?;
        for row in self.iter_rows() {
            let mut line = String::with_capacity(row.len() * 24);
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push_str(&format_f64(*v));
            }
            writeln!(w, "{line}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn write_bin(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(BIN_MAGIC).map_err(io)?;
        w.write_all(&BIN_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.rows as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.cols as u64).to_le_bytes()).map_err(io)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a matrix, picking the format from the extension (`.bin`, otherwise CSV).
    pub fn read(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Self::read_bin(path),
            _ => Self::read_csv(path).map(|(m, _)| m),
        }
    }

    /// Reads a CSV matrix and returns it with its header.
    pub fn read_csv(path: &Path) -> Result<(Self, Vec<String>)> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::parse(path, e.to_string()))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::parse(path, e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let cols = header.len();
        let mut data = Vec::new();
        let mut rows = 0;
        for record in reader.records() {
            let record = record.map_err(|e| Error::parse(path, e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != cols {
                return Err(Error::parse(
                    path,
                    format!(
                        "line {line}: expected {cols} fields, found {}",
                        record.len()
                    ),
                ));
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::parse(
                        path,
                        format!(
                            "line {line}, column {}: cannot parse {field:?} as a number",
                            j + 1
                        ),
                    )
                })?;
                data.push(v);
            }
            rows += 1;
        }
        Ok((Self { rows, cols, data }, header))
    }

    pub fn read_bin(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 24 || &bytes[..4] != BIN_MAGIC {
            return Err(Error::parse(path, "not a feature matrix file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != BIN_VERSION {
            return Err(Error::parse(path, format!("unsupported version {version}")));
        }
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let body = &bytes[24..];
        if body.len() != rows * cols * 8 {
            return Err(Error::parse(
                path,
                format!(
                    "expected {} payload bytes, found {}",
                    rows * cols * 8,
                    body.len()
                ),
            ));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { rows, cols, data })
    }
}

/// Shortest round-trip decimal representation.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}
