//! Reading regression data from CSV and writing matrices and fits back out.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::regression::RegressionFit;

const MISSING: [&str; 5] = ["", "na", "nan", "null", "."];

/// A numeric table read from a CSV file with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub data: DenseMatrix,
}

/// Reads a rectangular numeric CSV with a header. Rows are numbered from 1
/// for the first data row; columns from 0.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no columns", path.display())));
    }
    let cols = header.len();
    let mut data = Vec::new();
    let mut missing: Vec<(usize, usize)> = Vec::new();
    let mut rows = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != cols {
            return Err(Error::Parse {
                row,
                col: record.len().min(cols),
                msg: format!("expected {cols} fields, found {}", record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            if MISSING.contains(&field.to_ascii_lowercase().as_str()) {
                missing.push((row, c));
                data.push(0.0);
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => data.push(v),
                _ => {
                    return Err(Error::NonNumeric {
                        row,
                        col: c,
                        value: field.to_string(),
                    })
                }
            }
        }
        rows += 1;
    }
    if let Some(&(row, col)) = missing.first() {
        let mut listed: Vec<usize> = missing.iter().map(|m| m.0).collect();
        listed.dedup();
        return Err(Error::Parse {
            row,
            col,
            msg: format!("missing values in rows {listed:?}"),
        });
    }
    if rows == 0 {
        return Err(Error::EmptyInput(format!("{} has no data rows", path.display())));
    }
    Ok(Table {
        header,
        data: DenseMatrix::new(rows, cols, data)?,
    })
}

fn column_index(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::InvalidArgument(format!("no column named {name:?}")))
}

/// Response and design from a CSV file. Without `feature_columns`, every
/// column other than the target is a regressor. With `intercept`, a leading
/// column of ones is added.
pub fn ingest_csv(
    path: &Path,
    target_column: &str,
    feature_columns: Option<&[String]>,
    intercept: bool,
) -> Result<(Vec<f64>, DenseMatrix)> {
    let table = read_table(path)?;
    let target = column_index(&table.header, target_column)?;
    let features: Vec<usize> = match feature_columns {
        Some(names) => names
            .iter()
            .map(|n| column_index(&table.header, n))
            .collect::<Result<_>>()?,
        None => (0..table.header.len()).filter(|&c| c != target).collect(),
    };
    if features.is_empty() && !intercept {
        return Err(Error::EmptyInput("no regressors selected".into()));
    }
    let y = table.data.column(target);
    let x = table.data.select_columns(&features);
    let x = if intercept {
        DenseMatrix::from_fn(x.rows(), 1, |_, _| 1.0)?.hstack(&x)?
    } else {
        x
    };
    Ok((y, x))
}

/// Writes a matrix with a header row. Values use the shortest decimal form
/// that reads back to the same `f64`.
pub fn write_table(path: &Path, header: &[String], data: &DenseMatrix) -> Result<()> {
    write_table_to(File::create(path)?, header, data)
}

/// [`write_table`] into any writer.
pub fn write_table_to(out: impl Write, header: &[String], data: &DenseMatrix) -> Result<()> {
    if header.len() != data.cols() {
        return Err(Error::DimMismatch(format!(
            "{} names for {} columns",
            header.len(),
            data.cols()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for i in 0..data.rows() {
        w.write_record(data.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Provenance written above a fit's coefficient table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitMetadata {
    pub scheme: Option<String>,
    pub seed: Option<u64>,
    pub sketch_size: Option<usize>,
}

/// Writes `# key=value` metadata lines followed by `coef,estimate,std_error` rows.
pub fn write_fit(
    path: &Path,
    fit: &RegressionFit,
    names: &[String],
    meta: &FitMetadata,
) -> Result<()> {
    if names.len() != fit.k() {
        return Err(Error::DimMismatch(format!(
            "{} names for {} coefficients",
            names.len(),
            fit.k()
        )));
    }
    let mut out = BufWriter::new(File::create(path)?);
    write_fit_to(&mut out, fit, names, meta)?;
    out.flush()?;
    Ok(())
}

/// [`write_fit`] into any writer.
pub fn write_fit_to(
    out: &mut dyn Write,
    fit: &RegressionFit,
    names: &[String],
    meta: &FitMetadata,
) -> Result<()> {
    writeln!(out, "# n={}", fit.n_source)?;
    writeln!(out, "# m={}", meta.sketch_size.unwrap_or(fit.m_used))?;
    writeln!(out, "# scheme={}", meta.scheme.as_deref().unwrap_or("none"))?;
    match meta.seed {
        Some(s) => writeln!(out, "# seed={s}")?,
        None => writeln!(out, "# seed=none")?,
    }
    writeln!(out, "# variance_mode={}", fit.variance_mode)?;
    writeln!(out, "# sigma2_hat={}", fit.sigma2_hat)?;
    writeln!(out, "coef,estimate,std_error")?;
    for ((name, b), se) in names.iter().zip(&fit.beta).zip(&fit.std_errors) {
        writeln!(out, "{name},{b},{se}")?;
    }
    Ok(())
}

/// Column names for a design read by [`ingest_csv`].
pub fn coefficient_names(
    header: &[String],
    target_column: &str,
    feature_columns: Option<&[String]>,
    intercept: bool,
) -> Vec<String> {
    let mut names = Vec::new();
    if intercept {
        names.push("intercept".to_string());
    }
    match feature_columns {
        Some(f) => names.extend(f.iter().cloned()),
        None => names.extend(header.iter().filter(|h| *h != target_column).cloned()),
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_with(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_rows_with_intercept() {
        let f = file_with("y,x1\n1,2\n3,4\n5,6.5\n");
        let (y, x) = ingest_csv(f.path(), "y", None, true).unwrap();
        assert_eq!(y, vec![1.0, 3.0, 5.0]);
        assert_eq!(x.shape(), (3, 2));
        assert_eq!(x.column(0), vec![1.0; 3]);
        assert_eq!(x.column(1), vec![2.0, 4.0, 6.5]);
    }

    #[test]
    fn missing_value_names_row() {
        let f = file_with("y,x1\n1,2\n3,NA\n5,6\n");
        match ingest_csv(f.path(), "y", None, false) {
            Err(Error::Parse { row, col, msg }) => {
                assert_eq!((row, col), (2, 1));
                assert!(msg.contains("[2]"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn text_is_rejected() {
        let f = file_with("y,x1\n1,abc\n");
        assert!(matches!(
            ingest_csv(f.path(), "y", None, false),
            Err(Error::NonNumeric { row: 1, col: 1, .. })
        ));
        let f = file_with("y,x1\n");
        assert!(matches!(read_table(f.path()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn write_then_read_is_bitwise_equal() {
        let m = DenseMatrix::from_fn(20, 3, |i, j| {
            ((i * 31 + j * 17) as f64).sin() * 10f64.powi(j as i32 - 1) / 3.0
        })
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        let header: Vec<String> = ["y", "a", "b"].iter().map(|s| s.to_string()).collect();
        write_table(f.path(), &header, &m).unwrap();
        let t = read_table(f.path()).unwrap();
        assert_eq!(t.header, header);
        assert_eq!(t.data, m);
        let (y, x) = ingest_csv(f.path(), "y", Some(&header[1..]), false).unwrap();
        assert_eq!(y, m.column(0));
        assert_eq!(x, m.select_columns(&[1, 2]));
    }
}
