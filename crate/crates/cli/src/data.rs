//! Reading x/y blocks from delimited text.

use std::path::Path;

use nalgebra::DMatrix;

/// Failure to turn a file into two data blocks.
#[derive(Debug)]
pub struct DataError(pub String);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn err(msg: impl Into<String>) -> DataError {
    DataError(msg.into())
}

/// Numeric table, observations in rows.
#[derive(Debug, Clone)]
pub struct Table {
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn ncols(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn transposed(self) -> Self {
        let cols = self.ncols();
        let rows = (0..cols).map(|j| self.rows.iter().map(|r| r[j]).collect()).collect();
        Self { rows }
    }

    /// Variables `cols` as a `cols.len() x n` matrix.
    pub fn block(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(cols.len(), self.rows.len(), |i, j| self.rows[j][cols[i]])
    }
}

pub fn read_table(path: &Path, delimiter: u8, header: bool) -> Result<Table, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| err(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| err(format!("{}: {e}", path.display())))?;
        let line = r + 1 + usize::from(header);
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                if field.is_empty() {
                    return Err(err(format!("missing value at line {line}, column {}", c + 1)));
                }
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("non-numeric value '{field}' at line {line}, column {}", c + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(err(format!("{}: no data rows", path.display())));
    }
    Ok(Table { rows })
}

/// Parse one-based column specs such as `1-8`, `2,4,6-9`.
pub fn parse_columns(spec: &str, ncols: usize) -> Result<Vec<usize>, DataError> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (a, b) = match part.split_once('-') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => (part, part),
        };
        let parse = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad column spec '{part}'")));
        let (a, b) = (parse(a)?, parse(b)?);
        if a == 0 || b < a || b > ncols {
            return Err(err(format!("column range '{part}' outside 1..={ncols}")));
        }
        out.extend(a - 1..b);
    }
    if out.is_empty() {
        return Err(err(format!("empty column spec '{spec}'")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_specs() {
        assert_eq!(parse_columns("1-3,5", 6).unwrap(), vec![0, 1, 2, 4]);
        assert!(parse_columns("0-2", 6).is_err());
        assert!(parse_columns("4-9", 6).is_err());
        assert!(parse_columns("a", 6).is_err());
    }

    #[test]
    fn transpose_swaps_axes() {
        let t = Table { rows: vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]] }.transposed();
        assert_eq!(t.rows, vec![vec![1.0, 4.0], vec![2.0, 5.0], vec![3.0, 6.0]]);
        assert_eq!(t.block(&[1]), DMatrix::from_row_slice(1, 3, &[4.0, 5.0, 6.0]));
    }
}
