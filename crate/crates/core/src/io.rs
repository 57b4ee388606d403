//! CSV matrices and the fixed-precision text outputs.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::posthoc::{FitResult, LpmlRow};

/// Read a numeric CSV into a matrix, optionally skipping a header row.
pub fn read_matrix_csv(path: &Path, has_header: bool) -> Result<DMatrix<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_matrix_from(file, has_header).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path, message),
        other => other,
    })
}

pub fn read_matrix_from<R: std::io::Read>(reader: R, has_header: bool) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse("<csv>", e.to_string()))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field.parse::<f64>().map_err(|_| {
                    Error::parse("<csv>", format!("row {}, column {}: `{field}` is not a number", r + 1, c + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    "<csv>",
                    format!("row {} has {} fields, expected {}", r + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Write a matrix with full round-trip precision and no header.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_matrix_with(path, m, None, |v| v.to_string())
}

/// Write a matrix at 6 significant digits, with an optional header row.
pub fn write_matrix_sig6(path: &Path, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    write_matrix_with(path, m, header, sig6)
}

fn write_matrix_with(
    path: &Path,
    m: &DMatrix<f64>,
    header: Option<&[String]>,
    fmt: impl Fn(f64) -> String,
) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `%g`-style formatting with 6 significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (5 - exp) as usize, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Column names for a coefficient vector of dimension `dim`.
pub fn coefficient_names(dim: usize) -> Vec<String> {
    let mut names = vec!["beta0".to_string(), "beta1".into(), "beta2".into()];
    names.extend((1..=dim.saturating_sub(3)).map(|k| format!("gamma{k}")));
    names
}

/// Human-readable fit summary followed by the per-group table
/// `group,size,sigma2,beta0,beta1,beta2,gamma1..gammap`.
pub fn fit_summary(fit: &FitResult, h: f64) -> String {
    let sizes = fit.group_sizes();
    let mut s = String::new();
    writeln!(s, "k_hat: {}", fit.k_hat).unwrap();
    writeln!(s, "h: {}", sig6(h)).unwrap();
    writeln!(s, "selected_draw: {}", fit.draw_index + 1).unwrap();
    writeln!(s, "selected_iteration: {}", fit.iteration).unwrap();
    writeln!(s, "dahl_loss: {}", sig6(fit.dahl_loss)).unwrap();
    writeln!(s, "lpml: {}", sig6(fit.lpml)).unwrap();
    writeln!(
        s,
        "group_sizes: {}",
        sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
    )
    .unwrap();
    let dim = fit.params_hat.first().map_or(3, |p| p.theta.len());
    writeln!(s, "group,size,sigma2,{}", coefficient_names(dim).join(",")).unwrap();
    for (k, p) in fit.params_hat.iter().enumerate() {
        let coefs: Vec<String> = p.theta.iter().map(|&v| sig6(v)).collect();
        writeln!(s, "{},{},{},{}", k + 1, sizes[k], sig6(p.sigma2), coefs.join(",")).unwrap();
    }
    s
}

/// `h,lpml,k_hat` table.
pub fn lpml_table_csv(rows: &[LpmlRow]) -> String {
    let mut s = String::from("h,lpml,k_hat\n");
    for r in rows {
        writeln!(s, "{},{},{}", sig6(r.h), sig6(r.lpml), r.k_hat).unwrap();
    }
    s
}

/// `node,group` with 1-based ids.
pub fn labels_csv(z: &[usize]) -> String {
    let mut s = String::from("node,group\n");
    for (i, &k) in z.iter().enumerate() {
        writeln!(s, "{},{}", i + 1, k + 1).unwrap();
    }
    s
}

/// Parse a `node,group` file back into 0-based labels.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let m = read_matrix_csv(path, true)?;
    if m.ncols() != 2 {
        return Err(Error::parse(path, "expected columns node,group"));
    }
    let mut z = vec![usize::MAX; m.nrows()];
    for r in 0..m.nrows() {
        let node = m[(r, 0)];
        let group = m[(r, 1)];
        if node < 1.0 || node > m.nrows() as f64 || node.fract() != 0.0 || group < 1.0 || group.fract() != 0.0 {
            return Err(Error::parse(path, format!("row {} is not a valid 1-based node,group pair", r + 1)));
        }
        z[node as usize - 1] = group as usize - 1;
    }
    if z.contains(&usize::MAX) {
        return Err(Error::parse(path, "some nodes have no label"));
    }
    Ok(z)
}

/// `metric,value` rows.
pub fn metrics_csv(rows: &[(String, f64)]) -> String {
    let mut s = String::from("metric,value\n");
    for (name, v) in rows {
        writeln!(s, "{name},{}", sig6(*v)).unwrap();
    }
    s
}
