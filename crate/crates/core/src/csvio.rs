//! Plain numeric CSV: one sample per row, no header unless skipped explicitly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Reads a numeric matrix. Row and column numbers in errors are 1-based.
pub fn read_matrix<R: Read>(reader: R, skip_header: bool) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(skip_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 1 + usize::from(skip_header);
        let rec = rec.map_err(|e| Error::Parse {
            row: line,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(Error::Parse {
                    row: line,
                    column: rec.len().min(c) + 1,
                    message: format!("expected {c} fields, found {}", rec.len()),
                })
            }
            _ => {}
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: line,
                column: c + 1,
                message: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: c + 1,
                    message: format!("non-finite value {field:?}"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::InvalidInput("input contains no data rows".into()))?;
    Matrix::from_vec(rows, cols, data)
}

pub fn read_matrix_file(path: &Path, skip_header: bool) -> Result<Matrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_matrix(file, skip_header).map_err(|e| match e {
        Error::Parse { row, column, message } => Error::Parse {
            row,
            column,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Writes rows with round-trip precision.
pub fn write_matrix<W: Write>(writer: W, m: &Matrix) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in m.iter_rows() {
        wtr.write_record(row.iter().map(|v| format!("{v:.17e}")))
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_matrix_file(path: &Path, m: &Matrix) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_matrix(std::io::BufWriter::new(file), m)
}
