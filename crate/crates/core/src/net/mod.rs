//! TVP-VARNet: a learned surrogate forward model for the latent trajectory.
//!
//! The network sums two branches evaluated on a window of the last `w` latent
//! vectors: a single-layer LSTM whose final hidden state feeds a linear readout,
//! and a per-dimension autoregressive head over the last `p` rows. Inputs are
//! z-scored per feature with statistics from the training split.

mod cell;
mod io;
mod params;
mod train;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use io::{load_params, read_params, save_params, write_params, PARAMS_FORMAT_VERSION};
pub use params::TvpVarNetParams;
pub use train::{finetune, loss_and_gradient, sliding_samples, train, Sample, TrainReport};

use crate::error::{shape, Error, Result};
use crate::scalar::{lit, Real};

/// Which branches are trainable. A disabled branch stays clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Branches {
    #[default]
    Both,
    LstmOnly,
    ArOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Latent dimension d.
    pub input_dim: usize,
    pub hidden: usize,
    /// Window length w.
    pub lookback: usize,
    /// AR lags p (≤ lookback).
    pub ar_lags: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub validation_fraction: f64,
    pub branches: Branches,
    /// Learn a scalar weight on the AR branch (off: fixed at 1).
    pub gated: bool,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            input_dim: 1,
            hidden: 32,
            lookback: 10,
            ar_lags: 3,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 200,
            finetune_epochs: 20,
            batch_size: 32,
            clip_norm: 1.0,
            validation_fraction: 0.2,
            branches: Branches::Both,
            gated: false,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.input_dim == 0 || self.hidden == 0 || self.lookback == 0 || self.batch_size == 0 {
            return bad("input_dim, hidden, lookback and batch_size must be positive");
        }
        if self.ar_lags == 0 || self.ar_lags > self.lookback {
            return bad("ar_lags must be in 1..=lookback");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning_rate must be positive and momentum in [0, 1)");
        }
        if !(self.clip_norm > 0.0) || !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("clip_norm must be positive and validation_fraction in [0, 1)");
        }
        Ok(())
    }

    fn same_architecture(&self, other: &NetConfig) -> bool {
        self.input_dim == other.input_dim
            && self.hidden == other.hidden
            && self.lookback == other.lookback
            && self.ar_lags == other.ar_lags
    }
}

/// Per-feature affine standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler<T: Real> {
    pub mean: DVector<T>,
    pub std: DVector<T>,
}

impl<T: Real> Scaler<T> {
    pub fn identity(d: usize) -> Self {
        Self { mean: DVector::zeros(d), std: DVector::from_element(d, T::one()) }
    }

    /// Population statistics; a zero-variance feature gets unit scale.
    pub fn fit(rows: &[DVector<T>]) -> Self {
        let d = rows[0].len();
        let n: T = lit(rows.len() as f64);
        let mut mean = DVector::zeros(d);
        for r in rows {
            mean += r;
        }
        mean /= n;
        let mut var = DVector::zeros(d);
        for r in rows {
            let e = r - &mean;
            var += e.component_mul(&e);
        }
        var /= n;
        let std = var.map(|v| {
            let s = v.sqrt();
            if s > T::default_epsilon() * lit(1e3) { s } else { T::one() }
        });
        Self { mean, std }
    }

    pub fn transform(&self, v: &DVector<T>) -> DVector<T> {
        (v - &self.mean).component_div(&self.std)
    }

    pub fn inverse(&self, z: &DVector<T>) -> DVector<T> {
        z.component_mul(&self.std) + &self.mean
    }
}

/// A trained network together with its configuration and input scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct TvpVarNet<T: Real> {
    pub config: NetConfig,
    pub params: TvpVarNetParams<T>,
    pub scaler: Scaler<T>,
}

impl<T: Real> TvpVarNet<T> {
    pub fn new(config: NetConfig, params: TvpVarNetParams<T>, scaler: Scaler<T>) -> Result<Self> {
        config.validate()?;
        let d = config.input_dim;
        if params.input_dim() != d
            || params.hidden() != config.hidden
            || params.ar_lags() != config.ar_lags
            || scaler.mean.len() != d
            || scaler.std.len() != d
        {
            return Err(shape("parameters or scaler inconsistent with config"));
        }
        Ok(Self { config, params, scaler })
    }

    pub fn lookback(&self) -> usize {
        self.config.lookback
    }

    pub fn dim(&self) -> usize {
        self.config.input_dim
    }

    fn standardized_window(&self, rows: &[&DVector<T>]) -> Result<DMatrix<T>> {
        if rows.len() != self.lookback() {
            return Err(shape(format!(
                "window has {} rows, expected {}",
                rows.len(),
                self.lookback()
            )));
        }
        let d = self.dim();
        let mut m = DMatrix::zeros(rows.len(), d);
        for (s, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(shape(format!("window row has length {}, expected {d}", r.len())));
            }
            m.set_row(s, &self.scaler.transform(r).transpose());
        }
        Ok(m)
    }

    /// One-step prediction from `lookback` rows in original units (oldest first).
    pub fn predict_next(&self, rows: &[&DVector<T>]) -> Result<DVector<T>> {
        let z = self.standardized_window(rows)?;
        Ok(self.scaler.inverse(&cell::forward(&self.params, &z)))
    }

    /// Vector-Jacobian product of [`Self::predict_next`]: returns, per input row,
    /// `(d out / d row)' cotangent`.
    pub fn predict_next_vjp(
        &self,
        rows: &[&DVector<T>],
        cotangent: &DVector<T>,
    ) -> Result<Vec<DVector<T>>> {
        let z = self.standardized_window(rows)?;
        let cache = cell::forward_cached(&self.params, &z);
        let d_out = cotangent.component_mul(&self.scaler.std);
        let mut scratch = TvpVarNetParams::zeros(self.dim(), self.config.hidden, self.config.ar_lags);
        let dz = cell::backward(&self.params, &z, &cache, &d_out, &mut scratch, false, true)
            .expect("input gradient requested");
        Ok((0..rows.len())
            .map(|s| dz.row(s).transpose().component_div(&self.scaler.std))
            .collect())
    }

    /// Closed-loop forecast of `n` steps from a w×d seed window in original units.
    pub fn predict_n_steps(&self, seed_window: &DMatrix<T>, n: usize) -> Result<DMatrix<T>> {
        if seed_window.nrows() != self.lookback() || seed_window.ncols() != self.dim() {
            return Err(shape(format!(
                "seed window must be {}x{}, got {}x{}",
                self.lookback(),
                self.dim(),
                seed_window.nrows(),
                seed_window.ncols()
            )));
        }
        let mut z = seed_window.clone();
        for s in 0..z.nrows() {
            let row = self.scaler.transform(&seed_window.row(s).transpose());
            z.set_row(s, &row.transpose());
        }
        let zf = predict_n_steps(&self.params, &z, n)?;
        let mut out = zf.clone();
        for s in 0..n {
            out.set_row(s, &self.scaler.inverse(&zf.row(s).transpose()).transpose());
        }
        Ok(out)
    }

    /// One-step predictions for the targets `traj[lookback..]`, in original units.
    pub fn one_step_predictions(&self, traj: &[DVector<T>]) -> Result<Vec<DVector<T>>> {
        let w = self.lookback();
        if traj.len() <= w {
            return Err(shape("trajectory shorter than lookback + 1"));
        }
        (w..traj.len())
            .map(|t| self.predict_next(&traj[t - w..t].iter().collect::<Vec<_>>()))
            .collect()
    }
}

fn check_window<T: Real>(p: &TvpVarNetParams<T>, window: &DMatrix<T>) -> Result<()> {
    if window.ncols() != p.input_dim() || window.nrows() < p.ar_lags().max(1) {
        return Err(shape(format!(
            "window {}x{} incompatible with d={} and p={}",
            window.nrows(),
            window.ncols(),
            p.input_dim(),
            p.ar_lags()
        )));
    }
    Ok(())
}

/// `lstm_readout(h_w) + gate * ar(last p rows)` on a standardized w×d window.
pub fn net_forward<T: Real>(params: &TvpVarNetParams<T>, window: &DMatrix<T>) -> Result<DVector<T>> {
    check_window(params, window)?;
    Ok(cell::forward(params, window))
}

/// Recursive forecasting in model space: each prediction is appended and the
/// oldest row dropped.
pub fn predict_n_steps<T: Real>(
    params: &TvpVarNetParams<T>,
    seed_window: &DMatrix<T>,
    n: usize,
) -> Result<DMatrix<T>> {
    check_window(params, seed_window)?;
    if n == 0 {
        return Err(Error::Config("number of forecast steps must be at least 1".into()));
    }
    let w = seed_window.nrows();
    let d = seed_window.ncols();
    let mut window = seed_window.clone();
    let mut out = DMatrix::zeros(n, d);
    for s in 0..n {
        let next = cell::forward(params, &window);
        out.set_row(s, &next.transpose());
        let mut shifted = DMatrix::zeros(w, d);
        shifted.rows_mut(0, w - 1).copy_from(&window.rows(1, w - 1));
        shifted.set_row(w - 1, &next.transpose());
        window = shifted;
    }
    Ok(out)
}
