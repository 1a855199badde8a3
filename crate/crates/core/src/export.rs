//! CSV output. Floats are written with 17 significant digits so every value
//! reads back to the same binary64.

use std::collections::BTreeMap;

use crate::engine::{CovarianceCheckpoint, TrajectoryState};
use crate::error::{Error, Result};
use crate::estimator::CovarianceEstimate;
use crate::linalg::Matrix;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(csv_err)?;
    String::from_utf8(bytes).map_err(csv_err)
}

/// Named matrices as `matrix,row,col,value` rows.
pub fn matrices_csv(blocks: &[(&str, &Matrix)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["matrix", "row", "col", "value"]).map_err(csv_err)?;
    for (name, m) in blocks {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                w.write_record([name.to_string(), i.to_string(), j.to_string(), fmt_f64(m[(i, j)])])
                    .map_err(csv_err)?;
            }
        }
    }
    finish(w)
}

/// Inverse of [`matrices_csv`].
pub fn parse_matrices_csv(text: &str) -> Result<BTreeMap<String, Matrix>> {
    let mut entries: BTreeMap<String, Vec<(usize, usize, f64)>> = BTreeMap::new();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 4 {
            return Err(csv_err("expected 4 columns"));
        }
        let i: usize = rec[1].parse().map_err(csv_err)?;
        let j: usize = rec[2].parse().map_err(csv_err)?;
        let v: f64 = rec[3].parse().map_err(csv_err)?;
        entries.entry(rec[0].to_string()).or_default().push((i, j, v));
    }
    Ok(entries
        .into_iter()
        .map(|(name, vals)| {
            let nrows = vals.iter().map(|e| e.0 + 1).max().unwrap_or(0);
            let ncols = vals.iter().map(|e| e.1 + 1).max().unwrap_or(0);
            let mut m = Matrix::zeros(nrows, ncols);
            for (i, j, v) in vals {
                m[(i, j)] = v;
            }
            (name, m)
        })
        .collect())
}

/// Named matrices as a JSON object of row-major nested arrays, the layout
/// used for matrices in config files.
pub fn matrices_json(blocks: &[(&str, &Matrix)]) -> String {
    let map: serde_json::Map<String, serde_json::Value> = blocks
        .iter()
        .map(|(name, m)| {
            let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
            (name.to_string(), serde_json::json!(rows))
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("finite matrices serialize")
}

/// `k,theta_0..,r_0..`
pub fn trajectory_csv(states: &[TrajectoryState]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(first) = states.first() {
        let mut header = vec!["k".to_string()];
        header.extend((0..first.theta.len()).map(|i| format!("theta_{i}")));
        header.extend((0..first.r.len()).map(|i| format!("r_{i}")));
        w.write_record(&header).map_err(csv_err)?;
    }
    for s in states {
        let mut row = vec![s.k.to_string()];
        row.extend(s.theta.iter().chain(s.r.iter()).map(|&x| fmt_f64(x)));
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

fn block_names(prefix: &str, m: &Matrix) -> Vec<String> {
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| format!("{prefix}_{i}_{j}")))
        .collect()
}

fn block_values(m: &Matrix) -> impl Iterator<Item = String> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| fmt_f64(m[(i, j)])))
}

/// `k,beta_k,gamma_k,sigma11_*,sigma12_*,sigma22_*` from exact propagation.
pub fn propagation_csv(checkpoints: &[CovarianceCheckpoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(c) = checkpoints.first() {
        let mut header: Vec<String> = vec!["k".into(), "beta_k".into(), "gamma_k".into()];
        header.extend(block_names("sigma11", &c.sigma11));
        header.extend(block_names("sigma12", &c.sigma12));
        header.extend(block_names("sigma22", &c.sigma22));
        w.write_record(&header).map_err(csv_err)?;
    }
    for c in checkpoints {
        let mut row = vec![c.k.to_string(), fmt_f64(c.beta), fmt_f64(c.gamma)];
        row.extend(block_values(&c.sigma11));
        row.extend(block_values(&c.sigma12));
        row.extend(block_values(&c.sigma22));
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

/// Ensemble estimates: the propagation layout followed by `se11_*,se12_*,se22_*`.
pub fn ensemble_stats_csv(rows: &[(f64, f64, CovarianceEstimate)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some((_, _, e)) = rows.first() {
        let mut header: Vec<String> = vec!["k".into(), "beta_k".into(), "gamma_k".into()];
        header.extend(block_names("sigma11", &e.estimate.sigma11));
        header.extend(block_names("sigma12", &e.estimate.sigma12));
        header.extend(block_names("sigma22", &e.estimate.sigma22));
        header.extend(block_names("se11", &e.standard_error.sigma11));
        header.extend(block_names("se12", &e.standard_error.sigma12));
        header.extend(block_names("se22", &e.standard_error.sigma22));
        w.write_record(&header).map_err(csv_err)?;
    }
    for (beta, gamma, e) in rows {
        let mut row = vec![e.k.to_string(), fmt_f64(*beta), fmt_f64(*gamma)];
        for m in [
            &e.estimate.sigma11,
            &e.estimate.sigma12,
            &e.estimate.sigma22,
            &e.standard_error.sigma11,
            &e.standard_error.sigma12,
            &e.standard_error.sigma22,
        ] {
            row.extend(block_values(m));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}
