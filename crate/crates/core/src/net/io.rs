//! Text parameter format, version 1.
//!
//! ```text
//! tvpvarnet-params 1
//! config <NetConfig as single-line JSON>
//! tensor <name> <rows> <cols> <rows*cols values, row-major>
//! ...
//! end
//! ```
//!
//! Tensors appear in the order `scaler_mean` (1×d), `scaler_std` (1×d), `w_in`
//! (4H×d), `w_rec` (4H×H), `b_gate` (4H×1), `w_out` (d×H), `b_out` (d×1), `ar_w`
//! (d×p), `ar_b` (d×1), `gate` (1×1). Values are written as shortest round-trip
//! decimal `f64`, so save/load is lossless for `f32` and `f64`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{NetConfig, Scaler, TvpVarNet, TvpVarNetParams};
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

pub const PARAMS_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "tvpvarnet-params";

fn push_tensor<T: Real>(out: &mut String, name: &str, m: &DMatrix<T>) {
    write!(out, "tensor {name} {} {}", m.nrows(), m.ncols()).unwrap();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            write!(out, " {}", to_f64(m[(r, c)])).unwrap();
        }
    }
    out.push('\n');
}

pub fn write_params<T: Real>(net: &TvpVarNet<T>) -> String {
    let p = &net.params;
    let col = |v: &DVector<T>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    let row = |v: &DVector<T>| DMatrix::from_row_slice(1, v.len(), v.as_slice());
    let mut out = format!("{MAGIC} {PARAMS_FORMAT_VERSION}\n");
    out.push_str("config ");
    out.push_str(&serde_json::to_string(&net.config).expect("config serializes"));
    out.push('\n');
    push_tensor(&mut out, "scaler_mean", &row(&net.scaler.mean));
    push_tensor(&mut out, "scaler_std", &row(&net.scaler.std));
    push_tensor(&mut out, "w_in", &p.w_in);
    push_tensor(&mut out, "w_rec", &p.w_rec);
    push_tensor(&mut out, "b_gate", &col(&p.b_gate));
    push_tensor(&mut out, "w_out", &p.w_out);
    push_tensor(&mut out, "b_out", &col(&p.b_out));
    push_tensor(&mut out, "ar_w", &p.ar_w);
    push_tensor(&mut out, "ar_b", &col(&p.ar_b));
    push_tensor(&mut out, "gate", &DMatrix::from_element(1, 1, p.gate));
    out.push_str("end\n");
    out
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_tensor<T: Real>(line: Option<&str>, name: &str, rows: usize, cols: usize) -> Result<DMatrix<T>> {
    let line = line.ok_or_else(|| fmt_err(format!("missing tensor `{name}`")))?;
    let mut tok = line.split_ascii_whitespace();
    if tok.next() != Some("tensor") || tok.next() != Some(name) {
        return Err(fmt_err(format!("expected tensor `{name}`")));
    }
    let dims: Vec<usize> = tok
        .by_ref()
        .take(2)
        .map(|t| t.parse().map_err(|_| fmt_err(format!("bad shape for `{name}`"))))
        .collect::<Result<_>>()?;
    if dims != [rows, cols] {
        return Err(fmt_err(format!("tensor `{name}` has shape {dims:?}, expected [{rows}, {cols}]")));
    }
    let vals: Vec<T> = tok
        .map(|t| {
            t.parse::<f64>()
                .map(lit)
                .map_err(|_| fmt_err(format!("bad value `{t}` in `{name}`")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != rows * cols {
        return Err(fmt_err(format!("tensor `{name}` has {} values, expected {}", vals.len(), rows * cols)));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

pub fn read_params<T: Real>(text: &str) -> Result<TvpVarNet<T>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| fmt_err("empty parameter file"))?;
    match header.split_ascii_whitespace().collect::<Vec<_>>().as_slice() {
        [MAGIC, v] if v.parse::<u32>().ok() == Some(PARAMS_FORMAT_VERSION) => {}
        _ => return Err(fmt_err(format!("unsupported header `{header}`"))),
    }
    let cfg_line = lines
        .next()
        .and_then(|l| l.strip_prefix("config "))
        .ok_or_else(|| fmt_err("missing config line"))?;
    let config: NetConfig =
        serde_json::from_str(cfg_line).map_err(|e| fmt_err(format!("bad config: {e}")))?;
    let (d, h, p) = (config.input_dim, config.hidden, config.ar_lags);
    let vecr = |m: DMatrix<T>| DVector::from_iterator(m.len(), m.iter().copied());
    let mean = vecr(parse_tensor(lines.next(), "scaler_mean", 1, d)?);
    let std = vecr(parse_tensor(lines.next(), "scaler_std", 1, d)?);
    let params = TvpVarNetParams {
        w_in: parse_tensor(lines.next(), "w_in", 4 * h, d)?,
        w_rec: parse_tensor(lines.next(), "w_rec", 4 * h, h)?,
        b_gate: vecr(parse_tensor(lines.next(), "b_gate", 4 * h, 1)?),
        w_out: parse_tensor(lines.next(), "w_out", d, h)?,
        b_out: vecr(parse_tensor(lines.next(), "b_out", d, 1)?),
        ar_w: parse_tensor(lines.next(), "ar_w", d, p)?,
        ar_b: vecr(parse_tensor(lines.next(), "ar_b", d, 1)?),
        gate: parse_tensor::<T>(lines.next(), "gate", 1, 1)?[(0, 0)],
    };
    if lines.next() != Some("end") {
        return Err(fmt_err("missing `end` marker"));
    }
    if !params.is_finite() {
        return Err(fmt_err("non-finite parameter"));
    }
    TvpVarNet::new(config, params, Scaler { mean, std })
}

pub fn save_params<T: Real>(net: &TvpVarNet<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_params(net))?;
    Ok(())
}

pub fn load_params<T: Real>(path: impl AsRef<Path>) -> Result<TvpVarNet<T>> {
    read_params(&std::fs::read_to_string(path)?)
}
