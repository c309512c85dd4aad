use std::collections::BTreeSet;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "NaN" | "nan" | "?")
}

/// Densifies raw labels into `0..K`, ordered numerically when every label is
/// an integer and lexicographically otherwise.
fn densify(raw: &[String]) -> Vec<usize> {
    let ints: Option<Vec<i64>> = raw.iter().map(|s| s.parse::<i64>().ok()).collect();
    match ints {
        Some(ints) => {
            let uniq: BTreeSet<i64> = ints.iter().copied().collect();
            let uniq: Vec<i64> = uniq.into_iter().collect();
            ints.iter().map(|v| uniq.binary_search(v).unwrap()).collect()
        }
        None => {
            let uniq: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
            let uniq: Vec<&str> = uniq.into_iter().collect();
            raw.iter().map(|v| uniq.binary_search(&v.as_str()).unwrap()).collect()
        }
    }
}

/// Parses a delimited numeric table. With `has_labels` the last column holds
/// class labels. Missing cells are imputed with their column mean. `#` lines
/// are comments.
pub fn parse_table(
    text: &str,
    has_labels: bool,
    delimiter: u8,
) -> Result<(Tensor, Option<Vec<usize>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut cells: Vec<Option<f64>> = Vec::new();
    let mut raw_labels = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Table {
            row: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let line = rec.position().map_or(rows + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let n_features = rec.len() - usize::from(has_labels);
        if has_labels && rec.len() < 2 {
            return Err(Error::Table {
                row: line,
                detail: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Table {
                    row: line,
                    detail: format!("ragged row: {} cells, expected {w}", rec.len()),
                })
            }
            _ => {}
        }
        for (j, cell) in rec.iter().take(n_features).enumerate() {
            if is_missing(cell) {
                cells.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Table {
                    row: line,
                    detail: format!("non-numeric cell {cell:?} in column {j}"),
                })?;
                cells.push(Some(v));
            }
        }
        if has_labels {
            raw_labels.push(rec.get(n_features).unwrap_or("").to_string());
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::Degenerate("table has no rows".into()))?;
    let n_features = width - usize::from(has_labels);

    let mut means = vec![0.0; n_features];
    for (j, mean) in means.iter_mut().enumerate() {
        let present: Vec<f64> = (0..rows).filter_map(|i| cells[i * n_features + j]).collect();
        if present.is_empty() {
            return Err(Error::Degenerate(format!("column {j} has no values")));
        }
        *mean = present.iter().sum::<f64>() / present.len() as f64;
    }
    let data = cells
        .iter()
        .enumerate()
        .map(|(k, c)| c.unwrap_or(means[k % n_features]))
        .collect();
    let x = Tensor::matrix(rows, n_features, data)?;
    let labels = has_labels.then(|| densify(&raw_labels));
    Ok((x, labels))
}

pub fn load_table(path: impl AsRef<Path>, has_labels: bool, delimiter: u8) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (raw, labels) = parse_table(&text, has_labels, delimiter)?;
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, raw, labels, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_table_shape() {
        let (x, l) = parse_table("1,2\n3,4\n5,6\n", false, b',').unwrap();
        assert_eq!(x.shape(), &[3, 2]);
        assert!(l.is_none());
    }

    #[test]
    fn missing_cell_gets_column_mean() {
        let (x, _) = parse_table("# comment\n1,2\n,4\n5,9\n", false, b',').unwrap();
        assert_eq!(x.at(1, 0), 3.0);
        assert_eq!(x.at(1, 1), 4.0);
    }

    #[test]
    fn label_column() {
        let (x, l) = parse_table("0.5,0\n0.1,1\n0.2,1\n", true, b',').unwrap();
        assert_eq!(x.shape(), &[3, 1]);
        assert_eq!(l, Some(vec![0, 1, 1]));
        let (_, l) = parse_table("1;c-SC\n2;a-CS\n3;c-SC\n", true, b';').unwrap();
        assert_eq!(l, Some(vec![1, 0, 1]));
    }

    #[test]
    fn ragged_and_non_numeric_rows_report_row() {
        match parse_table("1,2\n3\n", false, b',') {
            Err(Error::Table { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
        match parse_table("1,2\n3,x\n", false, b',') {
            Err(Error::Table { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "1,2,0\n3,4,1\n").unwrap();
        let ds = load_table(&p, true, b',').unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert!((ds.mean_sq_norm() - 1.0).abs() < 1e-12);
    }
}
