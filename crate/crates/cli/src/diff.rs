//! Column-wise comparison of result tables.
//!
//! A table is a CSV payload whose leading `#` lines carry `key=value` metadata.
//! Leading columns named `p`, `k`, `t` or `q` are keys and must agree between
//! the two sides; every other column is compared where both sides hold values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

const KEY_COLUMNS: [&str; 4] = ["p", "k", "t", "q"];
const KEY_TOL: f64 = 1e-12;
/// Summaries recomputed from other tables of the same run; skipped when comparing directories.
const DERIVED_TABLES: [&str; 1] = ["diff_table.csv"];

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub meta: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Differences in one value column.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColumnDiff {
    pub table: String,
    pub column: String,
    pub sup: f64,
    pub l1: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn read_table(path: &Path) -> Result<Table, DiffError> {
    let read_err = |message: String| DiffError::Read { path: path.to_path_buf(), message };
    let text = fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
    let mut meta = BTreeMap::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix('#') {
            Some(c) => {
                for pair in c.split(',') {
                    if let Some((k, v)) = pair.split_once('=') {
                        meta.insert(k.trim().to_string(), v.trim().to_string());
                    }
                }
            }
            None => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header = rdr.headers().map_err(|e| read_err(e.to_string()))?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(|e| read_err(e.to_string()))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Table { name, meta, header, rows })
}

fn parse(cell: &str, table: &str, column: &str) -> Result<Option<f64>, DiffError> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|_| DiffError::SchemaMismatch(format!("{table}: column '{column}' holds non-numeric value '{cell}'")))
}

fn column(t: &Table, j: usize) -> Result<Vec<Option<f64>>, DiffError> {
    t.rows.iter().map(|r| parse(r.get(j).map_or("", String::as_str), &t.name, &t.header[j])).collect()
}

fn abs_diff(a: f64, b: f64) -> f64 {
    if a.is_nan() && b.is_nan() || a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Compares two tables with the given tolerance (`None`: the sum of the two
/// `error_estimate` entries, or zero), scaled by `scale`.
pub fn diff_tables(a: &Table, b: &Table, tolerance: Option<f64>, scale: f64) -> Result<Vec<ColumnDiff>, DiffError> {
    let label = if a.name == b.name { a.name.clone() } else { format!("{} vs {}", a.name, b.name) };
    if a.header != b.header {
        return Err(DiffError::SchemaMismatch(format!("{label}: columns {:?} vs {:?}", a.header, b.header)));
    }
    if a.rows.len() != b.rows.len() {
        return Err(DiffError::SchemaMismatch(format!("{label}: {} rows vs {} rows", a.rows.len(), b.rows.len())));
    }
    let n_keys = a.header.iter().take_while(|h| KEY_COLUMNS.contains(&h.as_str())).count();
    let mut keys = Vec::new();
    for j in 0..n_keys {
        let (ka, kb) = (column(a, j)?, column(b, j)?);
        for (i, (x, y)) in ka.iter().zip(&kb).enumerate() {
            let same = match (x, y) {
                (Some(x), Some(y)) => (x - y).abs() <= KEY_TOL * (1.0 + x.abs()),
                (None, None) => true,
                _ => false,
            };
            if !same {
                return Err(DiffError::SchemaMismatch(format!("{label}: key '{}' differs in row {}", a.header[j], i + 1)));
            }
        }
        keys.push(ka);
    }
    let estimate = |t: &Table| t.meta.get("error_estimate").and_then(|v| v.parse::<f64>().ok());
    let tol = scale
        * tolerance.unwrap_or_else(|| match (estimate(a), estimate(b)) {
            (Some(x), Some(y)) => x + y,
            _ => 0.0,
        });
    // Trapezoid weights in the key when there is one strictly increasing key, else a plain mean.
    let abscissa: Option<Vec<f64>> = (n_keys == 1)
        .then(|| keys[0].iter().copied().collect::<Option<Vec<f64>>>())
        .flatten()
        .filter(|x| x.len() >= 2 && x.windows(2).all(|w| w[1] > w[0]));

    let mut out = Vec::new();
    for j in n_keys..a.header.len() {
        let (ca, cb) = (column(a, j)?, column(b, j)?);
        if ca.iter().all(Option::is_none) || cb.iter().all(Option::is_none) {
            continue;
        }
        let mut d = Vec::with_capacity(ca.len());
        for (i, (x, y)) in ca.iter().zip(&cb).enumerate() {
            match (x, y) {
                (Some(x), Some(y)) => d.push(abs_diff(*x, *y)),
                (None, None) => d.push(0.0),
                _ => {
                    return Err(DiffError::SchemaMismatch(format!("{label}: column '{}' is empty on one side in row {}", a.header[j], i + 1)))
                }
            }
        }
        let sup = d.iter().copied().fold(0.0, f64::max);
        let l1 = match &abscissa {
            Some(x) => x.windows(2).zip(d.windows(2)).map(|(x, e)| 0.5 * (x[1] - x[0]) * (e[0] + e[1])).sum(),
            None => d.iter().sum::<f64>() / d.len().max(1) as f64,
        };
        out.push(ColumnDiff { table: label.clone(), column: a.header[j].clone(), sup, l1, tolerance: tol, pass: sup <= tol });
    }
    Ok(out)
}

fn csv_files(dir: &Path) -> Result<Vec<String>, DiffError> {
    let entries = fs::read_dir(dir).map_err(|e| DiffError::Read { path: dir.to_path_buf(), message: e.to_string() })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv") && !DERIVED_TABLES.contains(&n.as_str()))
        .collect();
    names.sort();
    Ok(names)
}

/// Compares two result directories table by table, or two single tables.
pub fn diff_paths(a: &Path, b: &Path, tolerance: Option<f64>, scale: f64) -> Result<Vec<ColumnDiff>, DiffError> {
    match (a.is_dir(), b.is_dir()) {
        (false, false) => diff_tables(&read_table(a)?, &read_table(b)?, tolerance, scale),
        (true, true) => {
            let (na, nb) = (csv_files(a)?, csv_files(b)?);
            if na != nb {
                let only: Vec<&String> = na.iter().filter(|n| !nb.contains(n)).chain(nb.iter().filter(|n| !na.contains(n))).collect();
                return Err(DiffError::SchemaMismatch(format!("result sets differ in {only:?}")));
            }
            if na.is_empty() {
                return Err(DiffError::SchemaMismatch(format!("{} holds no tables", a.display())));
            }
            let mut out = Vec::new();
            for name in &na {
                out.extend(diff_tables(&read_table(&a.join(name))?, &read_table(&b.join(name))?, tolerance, scale)?);
            }
            Ok(out)
        }
        _ => Err(DiffError::SchemaMismatch("cannot compare a directory with a single table".into())),
    }
}

/// Plain-text table of the differences.
pub fn render(diffs: &[ColumnDiff]) -> String {
    let mut s = format!("{:<36} {:<16} {:>12} {:>12} {:>12}  status\n", "table", "column", "sup", "l1", "tolerance");
    for d in diffs {
        s.push_str(&format!(
            "{:<36} {:<16} {:>12.4e} {:>12.4e} {:>12.4e}  {}\n",
            d.table,
            d.column,
            d.sup,
            d.l1,
            d.tolerance,
            if d.pass { "ok" } else { "EXCEEDS" }
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(name: &str, text: &str) -> Table {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        fs::write(&path, text).unwrap();
        read_table(&path).unwrap()
    }

    #[test]
    fn metadata_and_rows_are_parsed() {
        let t = table("a.csv", "# config_hash=ab, version=1\n# backend=x, error_estimate=0.5\np,h\n0,1\n1,2\n");
        assert_eq!(t.meta["config_hash"], "ab");
        assert_eq!(t.meta["error_estimate"], "0.5");
        assert_eq!(t.header, ["p", "h"]);
        assert_eq!(t.rows.len(), 2);
    }

    #[test]
    fn identical_tables_give_zero() {
        let t = table("a.csv", "p,h,c\n0,1,\n0.5,2,\n1,3,\n");
        let d = diff_tables(&t, &t, None, 1.0).unwrap();
        assert_eq!(d.len(), 1, "the empty column is skipped");
        assert_eq!((d[0].sup, d[0].l1, d[0].pass), (0.0, 0.0, true));
    }

    #[test]
    fn sup_and_trapezoid_l1() {
        let a = table("a.csv", "# error_estimate=0.1\np,h\n0,0\n1,0\n2,0\n");
        let b = table("b.csv", "# error_estimate=0.05\np,h\n0,0\n1,0.3\n2,0\n");
        let d = diff_tables(&a, &b, None, 1.0).unwrap();
        assert!((d[0].sup - 0.3).abs() < 1e-15);
        assert!((d[0].l1 - 0.3).abs() < 1e-15);
        assert!((d[0].tolerance - 0.15).abs() < 1e-15);
        assert!(!d[0].pass);
        assert!(diff_tables(&a, &b, None, 2.0).unwrap()[0].pass);
        assert!(diff_tables(&a, &b, Some(0.3), 1.0).unwrap()[0].pass);
    }

    #[test]
    fn two_keys_use_the_mean() {
        let a = table("e.csv", "k,t,e\n1,0.5,0\n1,1,0\n2,0.5,0\n2,1,0\n");
        let b = table("e.csv", "k,t,e\n1,0.5,0.4\n1,1,0\n2,0.5,0\n2,1,0\n");
        let d = diff_tables(&a, &b, Some(1.0), 1.0).unwrap();
        assert!((d[0].l1 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mismatches_are_reported() {
        let a = table("a.csv", "p,h\n0,1\n1,2\n");
        for other in ["q,h\n0,1\n1,2\n", "p,h\n0,1\n", "p,h\n0,1\n2,2\n", "p,h\n0,1\n1,\n"] {
            let b = table("b.csv", other);
            assert!(matches!(diff_tables(&a, &b, None, 1.0), Err(DiffError::SchemaMismatch(_))), "{other}");
        }
    }
}
