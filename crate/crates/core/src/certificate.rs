//! Plain-text matrix dumps for gains, certificates and regulator solutions.
//!
//! ```text
//! [K_1] 1 x 3
//! 1.5e0,2.25e0,-3e-1
//! ```
//!
//! Each block starts with a `[name] rows x cols` header followed by one
//! comma-separated line per row. Values use the shortest representation that
//! parses back to the same `f64`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn format_matrices(blocks: &[(&str, &DMatrix<f64>)]) -> String {
    let mut out = String::new();
    for (name, m) in blocks {
        out.push_str(&format!("[{name}] {} x {}\n", m.nrows(), m.ncols()));
        for row in m.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
    }
    out
}

fn parse_header(line: &str) -> Result<(String, usize, usize)> {
    let bad = || Error::Parse(format!("bad block header {line:?}"));
    let rest = line.strip_prefix('[').ok_or_else(bad)?;
    let (name, shape) = rest.split_once(']').ok_or_else(bad)?;
    let (r, c) = shape.split_once('x').ok_or_else(bad)?;
    let rows = r.trim().parse().map_err(|_| bad())?;
    let cols = c.trim().parse().map_err(|_| bad())?;
    Ok((name.trim().to_string(), rows, cols))
}

pub fn parse_matrices(text: &str) -> Result<Vec<(String, DMatrix<f64>)>> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let mut blocks = Vec::new();
    while let Some(header) = lines.next() {
        let (name, rows, cols) = parse_header(header)?;
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let line = lines.next().ok_or_else(|| {
                Error::Parse(format!("block {name} ends after {r} of {rows} rows"))
            })?;
            let row: Vec<f64> = if cols == 0 {
                Vec::new()
            } else {
                line.split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Parse(format!("bad number in block {name}: {line:?}")))?
            };
            if row.len() != cols {
                return Err(Error::Parse(format!(
                    "block {name} row {} has {} entries, expected {cols}",
                    r + 1,
                    row.len()
                )));
            }
            values.extend(row);
        }
        blocks.push((name, DMatrix::from_row_slice(rows, cols, &values)));
    }
    Ok(blocks)
}

/// Looks up a block by name.
pub fn find<'a>(blocks: &'a [(String, DMatrix<f64>)], name: &str) -> Result<&'a DMatrix<f64>> {
    blocks
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| m)
        .ok_or_else(|| Error::Parse(format!("missing block {name}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let k = DMatrix::from_row_slice(2, 3, &[0.1, -2.0 / 3.0, 1e-300, f64::MAX, 0.0, -7.25]);
        let empty = DMatrix::zeros(0, 2);
        let text = format_matrices(&[("K_1", &k), ("E", &empty)]);
        let back = parse_matrices(&text).unwrap();
        assert_eq!(back[0], ("K_1".to_string(), k));
        assert_eq!(back[1].1.shape(), (0, 2));
        assert!(find(&back, "P").is_err());
    }

    #[test]
    fn malformed_blocks_are_rejected() {
        assert!(parse_matrices("[K] 2 x 2\n1,2\n").is_err());
        assert!(parse_matrices("[K] 1 x 2\n1,2,3\n").is_err());
        assert!(parse_matrices("K 1 x 1\n1\n").is_err());
    }
}
