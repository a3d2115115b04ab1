//! Plain-text matrix blocks shared by the model file formats.
//!
//! A block is a `rows cols` shape line followed by `rows` lines of
//! whitespace-separated values printed with 17 significant digits.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextFormatError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unexpected end of input while reading {what}")]
    Truncated { what: String },
}

pub fn fmt_f64(value: f64) -> String {
    format!("{value:.16e}")
}

pub fn write_matrix(out: &mut String, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_f64(m[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

pub fn write_vector(out: &mut String, v: &[f64]) {
    write_matrix(out, &DMatrix::from_row_slice(1, v.len(), v));
}

/// Line cursor that skips blank lines and `#` comments.
pub struct LineCursor<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineCursor<'a> {
    pub fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
        }
    }

    pub fn next_line(&mut self, what: &str) -> Result<(usize, &'a str), TextFormatError> {
        for (idx, raw) in self.lines.by_ref() {
            let content = raw.split('#').next().unwrap_or("").trim();
            if !content.is_empty() {
                return Ok((idx + 1, content));
            }
        }
        Err(TextFormatError::Truncated { what: what.into() })
    }

    /// Reads a `key value...` line, checking the key.
    pub fn expect_key(&mut self, key: &str) -> Result<(usize, Vec<&'a str>), TextFormatError> {
        let (line, content) = self.next_line(key)?;
        let mut fields = content.split_whitespace();
        match fields.next() {
            Some(k) if k == key => Ok((line, fields.collect())),
            other => Err(TextFormatError::Malformed {
                line,
                message: format!("expected `{key}`, found `{}`", other.unwrap_or("")),
            }),
        }
    }

    pub fn read_matrix(&mut self, what: &str) -> Result<DMatrix<f64>, TextFormatError> {
        let (line, shape) = self.next_line(what)?;
        let dims: Vec<usize> = shape
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| TextFormatError::Malformed {
                line,
                message: format!("bad shape for {what}: {e}"),
            })?;
        let [rows, cols] = dims[..] else {
            return Err(TextFormatError::Malformed {
                line,
                message: format!("shape for {what} must be `rows cols`"),
            });
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (line, content) = self.next_line(what)?;
            let values: Vec<f64> = content
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| TextFormatError::Malformed {
                    line,
                    message: format!("{what}: {e}"),
                })?;
            if values.len() != cols {
                return Err(TextFormatError::Malformed {
                    line,
                    message: format!("{what}: expected {cols} values, found {}", values.len()),
                });
            }
            data.extend(values);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    pub fn read_vector(&mut self, what: &str) -> Result<Vec<f64>, TextFormatError> {
        let m = self.read_matrix(what)?;
        Ok(m.iter().copied().collect())
    }
}
