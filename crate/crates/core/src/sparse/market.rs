use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::SparseMatrix;
use crate::error::{Error, Result};

const HEADER: &str = "%%MatrixMarket matrix coordinate real general";

/// Writes a coordinate-format Matrix Market file (1-based indices).
pub fn write_matrix_market(a: &SparseMatrix, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{HEADER}")?;
    writeln!(w, "{} {} {}", a.rows(), a.cols(), a.nnz())?;
    for (i, j, v) in a.triplets() {
        writeln!(w, "{} {} {:.16e}", i + 1, j + 1, v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_market(path: &Path) -> Result<SparseMatrix> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut shape: Option<(usize, usize, usize)> = None;
    let mut trip = Vec::new();
    for (ln, line) in f.lines().enumerate() {
        let line = line?;
        let lineno = ln + 1;
        if ln == 0 {
            if !line.trim().eq_ignore_ascii_case(HEADER) {
                return Err(parse_err(lineno, format!("unsupported header `{line}`")));
            }
            continue;
        }
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        if shape.is_none() {
            if fields.len() != 3 {
                return Err(parse_err(lineno, "expected `rows cols nnz`".into()));
            }
            let p = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| parse_err(lineno, format!("bad size `{s}`: {e}")))
            };
            shape = Some((p(fields[0])?, p(fields[1])?, p(fields[2])?));
            continue;
        }
        if fields.len() != 3 {
            return Err(parse_err(lineno, "expected `row col value`".into()));
        }
        let i: usize = fields[0]
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad row index: {e}")))?;
        let j: usize = fields[1]
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad column index: {e}")))?;
        let v: f64 = fields[2]
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad value: {e}")))?;
        if i == 0 || j == 0 {
            return Err(parse_err(lineno, "indices are 1-based".into()));
        }
        trip.push((i - 1, j - 1, v));
    }
    let (r, c, nnz) = shape.ok_or_else(|| parse_err(0, "missing size line".into()))?;
    if trip.len() != nnz {
        return Err(parse_err(0, format!("expected {nnz} entries, found {}", trip.len())));
    }
    SparseMatrix::from_triplets(&trip, (r, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let a = SparseMatrix::from_triplets(
            &[(0, 0, 1.0 / 3.0), (2, 1, -7.25e-300), (1, 2, std::f64::consts::PI)],
            (3, 4),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mtx");
        write_matrix_market(&a, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), HEADER);
        assert_eq!(read_matrix_market(&p).unwrap(), a);
    }
}
