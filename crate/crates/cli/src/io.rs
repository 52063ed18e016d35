//! CSV ingestion and emission. Dialect: comma separator, first row of a
//! matrix file holds the column labels, decimal point, UTF-8, numerics
//! unquoted.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use hcsvd::matrixkit::{CorrelationMatrix, RawMatrix};

#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for InputError {}

fn fail<T>(message: String) -> Result<T, InputError> {
    Err(InputError(message))
}

pub struct MatrixFile {
    pub labels: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Reads a labeled numeric matrix. Error messages name the offending row
/// and column (1-based, counting the header as row 1).
pub fn read_matrix_csv(path: &Path) -> Result<MatrixFile, InputError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| InputError(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| InputError(format!("{}: file is empty", path.display())))?;
    let labels: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    if labels.iter().any(|l| l.is_empty()) {
        return fail(format!("{}: empty column label in header", path.display()));
    }
    let p = labels.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_index, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != p {
            return fail(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                line_index + 1,
                fields.len(),
                p
            ));
        }
        let mut row = Vec::with_capacity(p);
        for (col, field) in fields.iter().enumerate() {
            match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return fail(format!(
                        "{}: row {}, column {} ('{}'): not a finite number: '{}'",
                        path.display(),
                        line_index + 1,
                        col + 1,
                        labels[col],
                        field.trim()
                    ))
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return fail(format!("{}: no data rows", path.display()));
    }
    let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    Ok(MatrixFile { labels, values })
}

/// Interprets a matrix file as raw observations.
pub fn as_raw_matrix(file: MatrixFile, path: &Path) -> Result<RawMatrix, InputError> {
    RawMatrix::new(file.values, file.labels)
        .map_err(|e| InputError(format!("{}: {e}", path.display())))
}

/// Interprets a matrix file as a correlation matrix: square, symmetric
/// within 1e-8 (then symmetrized by averaging), unit diagonal, PSD.
pub fn as_correlation_matrix(
    file: MatrixFile,
    path: &Path,
) -> Result<CorrelationMatrix, InputError> {
    let p = file.labels.len();
    if file.values.nrows() != p {
        return fail(format!(
            "{}: correlation matrix must be square, got {} rows for {} columns",
            path.display(),
            file.values.nrows(),
            p
        ));
    }
    let mut values = file.values;
    for i in 0..p {
        for j in (i + 1)..p {
            let delta = (values[(i, j)] - values[(j, i)]).abs();
            if delta > 1e-8 {
                return fail(format!(
                    "{}: asymmetry {delta:.3e} at row {}, column {} exceeds 1e-8",
                    path.display(),
                    i + 2,
                    j + 1
                ));
            }
            let avg = 0.5 * (values[(i, j)] + values[(j, i)]);
            values[(i, j)] = avg;
            values[(j, i)] = avg;
        }
    }
    CorrelationMatrix::try_new(values, file.labels)
        .map_err(|e| InputError(format!("{}: {e}", path.display())))
}

/// Serializes a labeled matrix; `Display`-formatted floats keep the
/// shortest round-trip representation, so output is byte-deterministic.
pub fn matrix_to_csv(labels: &[String], values: &DMatrix<f64>) -> String {
    let mut out = String::new();
    out.push_str(&labels.join(","));
    out.push('\n');
    for i in 0..values.nrows() {
        for j in 0..values.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", values[(i, j)]);
        }
        out.push('\n');
    }
    out
}

/// Writes a partition as variable,cluster_id rows.
pub fn partition_to_csv(labels: &[String], membership: &[usize]) -> String {
    let mut out = String::from("variable,cluster_id\n");
    for (label, id) in labels.iter().zip(membership.iter()) {
        let _ = writeln!(out, "{label},{id}");
    }
    out
}

/// Reads a variable,cluster_id file (header required).
pub fn read_partition_csv(path: &Path) -> Result<Vec<(String, String)>, InputError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| InputError(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == "variable,cluster_id" => {}
        _ => {
            return fail(format!(
                "{}: expected header 'variable,cluster_id'",
                path.display()
            ))
        }
    }
    let mut out = Vec::new();
    for (line_index, line) in lines {
        let mut fields = line.splitn(2, ',');
        let variable = fields.next().unwrap_or("").trim();
        let cluster = fields.next().unwrap_or("").trim();
        if variable.is_empty() || cluster.is_empty() {
            return fail(format!(
                "{}: row {}: expected 'variable,cluster_id'",
                path.display(),
                line_index + 1
            ));
        }
        out.push((variable.to_string(), cluster.to_string()));
    }
    if out.is_empty() {
        return fail(format!("{}: no assignments", path.display()));
    }
    Ok(out)
}
