use super::{fmt_f64, parse_error, parse_f64, text_lines};
use crate::error::{Location, Result};
use crate::features::{FeatureMatrix, FEATURE_DIM};

const FORMAT: &str = "feature";

pub(super) fn parse(bytes: &[u8]) -> Result<FeatureMatrix> {
    let lines = text_lines(FORMAT, bytes)?;
    let mut rows_iter = lines.iter().filter(|(_, l)| !l.trim().is_empty());
    let Some(&(n, header)) = rows_iter.next() else {
        return Err(parse_error(FORMAT, Location::Line(1), "empty file"));
    };
    let at = Location::Line(n);
    let count = match header.split_ascii_whitespace().collect::<Vec<_>>().as_slice() {
        ["FPFH", count, dim] => {
            if dim.parse::<usize>().ok() != Some(FEATURE_DIM) {
                return Err(parse_error(FORMAT, at, format!("dimension must be {FEATURE_DIM}")));
            }
            count
                .parse::<usize>()
                .map_err(|_| parse_error(FORMAT, at, format!("bad row count {count:?}")))?
        }
        _ => return Err(parse_error(FORMAT, at, "expected header 'FPFH <rows> 33'")),
    };
    let body: Vec<_> = rows_iter.collect();
    if body.len() != count {
        return Err(parse_error(FORMAT, at, format!("header declares {count} rows, file has {}", body.len())));
    }
    let mut rows = Vec::with_capacity(count);
    for &&(n, line) in &body {
        let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
        if tokens.len() != FEATURE_DIM {
            return Err(parse_error(FORMAT, Location::Line(n), format!("expected {FEATURE_DIM} values")));
        }
        let mut row = [0.0; FEATURE_DIM];
        for (slot, tok) in row.iter_mut().zip(&tokens) {
            *slot = parse_f64(FORMAT, n, tok)?;
            if !slot.is_finite() {
                return Err(parse_error(FORMAT, Location::Line(n), "non-finite value"));
            }
        }
        rows.push(row);
    }
    FeatureMatrix::from_rows(rows).map_err(|e| parse_error(FORMAT, at, e.to_string()))
}

pub(super) fn encode(features: &FeatureMatrix) -> String {
    let mut out = format!("FPFH {} {FEATURE_DIM}\n", features.len());
    for row in features.rows() {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out += &line.join(" ");
        out.push('\n');
    }
    out
}
