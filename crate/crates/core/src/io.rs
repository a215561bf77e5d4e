//! CSV serialization of feature/weight matrices and metric rows.
//!
//! Matrix files start with `# d=<d> K=<K> n=<n>` and then hold one matrix
//! row per line.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CollapseError, Result};
use crate::metrics::MetricReport;
use crate::model::{Dims, FeatureMatrix, WeightMatrix};

pub fn dims_header(dims: Dims) -> String {
    format!("# d={} K={} n={}", dims.feature_dim, dims.classes, dims.per_class)
}

pub fn parse_dims_header(line: &str) -> Result<Dims> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| CollapseError::Parse(format!("missing '#' header: {line:?}")))?;
    let (mut d, mut k, mut n) = (None, None, None);
    for tok in body.split_whitespace() {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| CollapseError::Parse(format!("bad header token {tok:?}")))?;
        let val: usize = val
            .parse()
            .map_err(|_| CollapseError::Parse(format!("bad header value {tok:?}")))?;
        match key {
            "d" => d = Some(val),
            "K" => k = Some(val),
            "n" => n = Some(val),
            _ => return Err(CollapseError::Parse(format!("unknown header key {key:?}"))),
        }
    }
    match (d, k, n) {
        (Some(d), Some(k), Some(n)) => Dims::new(k, n, d),
        _ => Err(CollapseError::Parse(format!("header needs d, K and n: {line:?}"))),
    }
}

fn write_matrix<W: Write>(out: W, header: &str, m: &DMatrix<f64>) -> Result<()> {
    let mut out = out;
    writeln!(out, "{header}")?;
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for r in 0..m.nrows() {
        wtr.write_record(m.row(r).iter().map(|x| format!("{x:e}")))?;
    }
    wtr.flush()?;
    Ok(())
}

fn read_matrix<R: Read>(input: R, rows_of: impl Fn(Dims) -> (usize, usize)) -> Result<(Dims, DMatrix<f64>)> {
    let mut reader = BufReader::new(input);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let dims = parse_dims_header(&header)?;
    let (rows, cols) = rows_of(dims);
    let mut csv_rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut m = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for rec in csv_rdr.records() {
        let rec = rec?;
        if r >= rows {
            return Err(CollapseError::Parse(format!("more than {rows} rows")));
        }
        if rec.len() != cols {
            return Err(CollapseError::Parse(format!(
                "row {r} has {} entries, expected {cols}",
                rec.len()
            )));
        }
        for (c, field) in rec.iter().enumerate() {
            m[(r, c)] = field
                .trim()
                .parse()
                .map_err(|_| CollapseError::Parse(format!("bad number {field:?} in row {r}")))?;
        }
        r += 1;
    }
    if r != rows {
        return Err(CollapseError::Parse(format!("expected {rows} rows, got {r}")));
    }
    Ok((dims, m))
}

pub fn write_features<W: Write>(out: W, h: &FeatureMatrix) -> Result<()> {
    write_matrix(out, &dims_header(h.dims()), h.as_matrix())
}

pub fn read_features<R: Read>(input: R) -> Result<FeatureMatrix> {
    let (dims, m) = read_matrix(input, |d| (d.feature_dim, d.total_samples()))?;
    FeatureMatrix::new(m, dims)
}

pub fn write_weights<W: Write>(out: W, w: &WeightMatrix, dims: Dims) -> Result<()> {
    write_matrix(out, &dims_header(dims), w.as_matrix())
}

pub fn read_weights<R: Read>(input: R) -> Result<(Dims, WeightMatrix)> {
    let (dims, m) = read_matrix(input, |d| (d.classes, d.feature_dim))?;
    Ok((dims, WeightMatrix::new(m, dims)?))
}

pub fn save_features(path: &Path, h: &FeatureMatrix) -> Result<()> {
    write_features(File::create(path)?, h)
}

pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    read_features(File::open(path)?)
}

pub const METRIC_COLUMNS: [&str; 8] = ["step", "t", "nc1_tilde", "nc1_fisher", "nc2", "nc3", "trSW", "trSB"];

/// Fields of one metric CSV row; an absent NC3 is an empty field.
pub fn metric_record(step: usize, t: f64, m: &MetricReport) -> Vec<String> {
    vec![
        step.to_string(),
        format!("{t:e}"),
        format!("{:e}", m.nc1_tilde),
        format!("{:e}", m.nc1_fisher),
        format!("{:e}", m.nc2),
        m.nc3.map(|x| format!("{x:e}")).unwrap_or_default(),
        format!("{:e}", m.trace_within),
        format!("{:e}", m.trace_between),
    ]
}
