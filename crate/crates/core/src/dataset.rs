//! CSV interchange formats.
//!
//! * Data: `step, y_1..y_q, x_1..x_K[, gamma_1..gamma_n]`, one row per aligned
//!   step. Synthetic datasets carry the true latent path in the gamma columns.
//! * Latent path: `step, beta_1..beta_n`.
//! * Forecasts: `step, yhat_1..yhat_q, y_1..y_q`.
//!
//! Floats are written in the shortest form that parses back to the same `f64`.

use std::io::{Read, Write};

use nalgebra::DVector;

use crate::error::{shape, Error, Result};
use crate::model::{LatentTrajectory, ObservationSeries, RegressorSeries};
use crate::scalar::{lit, to_f64, Real};
use crate::synth::SyntheticDataset;

/// Aligned observation/regressor rows as read from a data CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable<T: Real> {
    pub steps: Vec<usize>,
    pub observations: Vec<DVector<T>>,
    pub regressors: Vec<DVector<T>>,
    pub gamma: Option<Vec<DVector<T>>>,
}

impl<T: Real> DataTable<T> {
    pub fn from_synthetic(ds: &SyntheticDataset<T>) -> Self {
        Self {
            steps: ds.gamma_true.steps().map(|(s, _)| s).collect(),
            observations: ds.observations.rows().to_vec(),
            regressors: ds.regressors.vectors().to_vec(),
            gamma: Some(ds.gamma_true.states().to_vec()),
        }
    }

    pub fn from_series(y: &ObservationSeries<T>, x: &RegressorSeries<T>) -> Result<Self> {
        let off = x.offset();
        if y.len() != off + x.len() {
            return Err(shape(format!(
                "{} observations do not match {} regressors at offset {off}",
                y.len(),
                x.len()
            )));
        }
        Ok(Self {
            steps: (off..y.len()).collect(),
            observations: y.rows()[off..].to_vec(),
            regressors: x.vectors().to_vec(),
            gamma: None,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.first().map_or(0, |v| v.len())
    }

    pub fn regressor_dim(&self) -> usize {
        self.regressors.first().map_or(0, |v| v.len())
    }

    pub fn regressor_series(&self) -> Result<RegressorSeries<T>> {
        RegressorSeries::exogenous(self.regressors.clone())
    }
}

pub(crate) fn fmt<T: Real>(x: T) -> String {
    to_f64(x).to_string()
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

pub fn write_data_csv<T: Real, W: Write>(table: &DataTable<T>, out: W) -> Result<()> {
    let q = table.obs_dim();
    let k = table.regressor_dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string()];
    header.extend(numbered("y", q));
    header.extend(numbered("x", k));
    if let Some(g) = &table.gamma {
        header.extend(numbered("gamma", g.first().map_or(0, |v| v.len())));
    }
    w.write_record(&header)?;
    for i in 0..table.len() {
        let mut rec = vec![table.steps[i].to_string()];
        rec.extend(table.observations[i].iter().map(|v| fmt(*v)));
        rec.extend(table.regressors[i].iter().map(|v| fmt(*v)));
        if let Some(g) = &table.gamma {
            rec.extend(g[i].iter().map(|v| fmt(*v)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Column positions of `prefix_1..prefix_m`, requiring contiguous numbering.
fn numbered_columns(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut cols = Vec::new();
    loop {
        let name = format!("{prefix}_{}", cols.len() + 1);
        match headers.iter().position(|h| h == name) {
            Some(p) => cols.push(p),
            None => break,
        }
    }
    let stray = headers.iter().find(|h| {
        h.strip_prefix(prefix)
            .and_then(|r| r.strip_prefix('_'))
            .and_then(|r| r.parse::<usize>().ok())
            .is_some_and(|i| i == 0 || i > cols.len())
    });
    if let Some(h) = stray {
        return Err(Error::Format(format!("column {h} breaks the {prefix}_1..{prefix}_m numbering")));
    }
    Ok(cols)
}

fn parse_value<T: Real>(s: &str, row: u64, column: &str) -> Result<T> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Value { row, message: format!("{column}: cannot parse {s:?}") })?;
    if !v.is_finite() {
        return Err(Error::Value { row, message: format!("{column}: non-finite value") });
    }
    Ok(lit(v))
}

struct Numeric {
    steps: Vec<usize>,
    groups: Vec<Vec<DVector<f64>>>,
}

fn read_numeric<R: Read>(input: R, prefixes: &[&str], required: &[bool]) -> Result<(Numeric, Vec<usize>)> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let step_col = headers
        .iter()
        .position(|h| h == "step")
        .ok_or_else(|| Error::Schema { column: "step".into() })?;
    let mut cols = Vec::new();
    for (p, req) in prefixes.iter().zip(required) {
        let c = numbered_columns(&headers, p)?;
        if c.is_empty() && *req {
            return Err(Error::Schema { column: format!("{p}_1") });
        }
        cols.push(c);
    }
    let mut out = Numeric { steps: Vec::new(), groups: vec![Vec::new(); prefixes.len()] };
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i as u64 + 2;
        let step = rec[step_col]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Value { row, message: format!("step: cannot parse {:?}", &rec[step_col]) })?;
        if out.steps.last().is_some_and(|&prev| step <= prev) {
            return Err(Error::Value { row, message: "steps must be strictly increasing".into() });
        }
        out.steps.push(step);
        for (g, (c, p)) in cols.iter().zip(prefixes).enumerate() {
            let vals = c
                .iter()
                .enumerate()
                .map(|(j, &col)| parse_value::<f64>(&rec[col], row, &format!("{p}_{}", j + 1)))
                .collect::<Result<Vec<_>>>()?;
            out.groups[g].push(DVector::from_vec(vals));
        }
    }
    if out.steps.is_empty() {
        return Err(Error::InvalidData("no data rows".into()));
    }
    let dims = cols.iter().map(|c| c.len()).collect();
    Ok((out, dims))
}

fn convert<T: Real>(rows: Vec<DVector<f64>>) -> Vec<DVector<T>> {
    rows.into_iter().map(|v| v.map(lit)).collect()
}

/// Reads a data CSV. Gamma columns are optional.
pub fn read_data_csv<T: Real, R: Read>(input: R) -> Result<DataTable<T>> {
    let (mut num, dims) = read_numeric(input, &["y", "x", "gamma"], &[true, true, false])?;
    let gamma = num.groups.pop().expect("three groups");
    let regressors = num.groups.pop().expect("three groups");
    let observations = num.groups.pop().expect("three groups");
    Ok(DataTable {
        steps: num.steps,
        observations: convert(observations),
        regressors: convert(regressors),
        gamma: (dims[2] > 0).then(|| convert(gamma)),
    })
}

pub fn write_trajectory_csv<T: Real, W: Write>(traj: &LatentTrajectory<T>, out: W) -> Result<()> {
    let steps: Vec<usize> = traj.steps().map(|(s, _)| s).collect();
    write_vectors_csv(&steps, traj.states(), "beta", out)
}

/// `(steps, states)` from a latent-path CSV.
pub fn read_trajectory_csv<T: Real, R: Read>(input: R) -> Result<(Vec<usize>, Vec<DVector<T>>)> {
    let (mut num, _) = read_numeric(input, &["beta"], &[true])?;
    Ok((num.steps, convert(num.groups.pop().expect("one group"))))
}

/// Writes `step, prefix_1..prefix_m` rows.
pub fn write_vectors_csv<T: Real, W: Write>(steps: &[usize], rows: &[DVector<T>], prefix: &str, out: W) -> Result<()> {
    if steps.len() != rows.len() {
        return Err(shape("steps and rows must align"));
    }
    let m = rows.first().map_or(0, |v| v.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string()];
    header.extend(numbered(prefix, m));
    w.write_record(&header)?;
    for (s, v) in steps.iter().zip(rows) {
        let mut rec = vec![s.to_string()];
        rec.extend(v.iter().map(|x| fmt(*x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vectors_csv<T: Real, R: Read>(input: R, prefix: &str) -> Result<(Vec<usize>, Vec<DVector<T>>)> {
    let (mut num, _) = read_numeric(input, &[prefix], &[true])?;
    Ok((num.steps, convert(num.groups.pop().expect("one group"))))
}

/// Writes `step, yhat_*, y_*`; `steps` index into `observations`'s row labels.
pub fn write_forecasts_csv<T: Real, W: Write>(
    steps: &[usize],
    forecasts: &[DVector<T>],
    observed: &[DVector<T>],
    out: W,
) -> Result<()> {
    if steps.len() != forecasts.len() || steps.len() != observed.len() {
        return Err(shape("steps, forecasts and observations must align"));
    }
    let q = forecasts.first().map_or(0, |v| v.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string()];
    header.extend(numbered("yhat", q));
    header.extend(numbered("y", q));
    w.write_record(&header)?;
    for i in 0..steps.len() {
        let mut rec = vec![steps[i].to_string()];
        rec.extend(forecasts[i].iter().map(|x| fmt(*x)));
        rec.extend(observed[i].iter().map(|x| fmt(*x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
