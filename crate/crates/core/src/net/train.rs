use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{cell, Branches, NetConfig, Scaler, TvpVarNet, TvpVarNetParams};
use crate::error::{Error, Result};
use crate::model::LatentTrajectory;
use crate::scalar::{lit, to_f64, Real};

/// A sliding training example: w×d input window and the next row as target.
#[derive(Debug, Clone)]
pub struct Sample<T: Real> {
    pub window: DMatrix<T>,
    pub target: DVector<T>,
    /// Index of the target row in the source sequence.
    pub target_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Standardized-space MSE on the training split before any update.
    pub initial_train_loss: f64,
    pub initial_val_loss: Option<f64>,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch whose parameters were kept; 0 means the starting parameters.
    pub best_epoch: usize,
    pub wall_time_secs: f64,
}

pub fn sliding_samples<T: Real>(rows: &[DVector<T>], lookback: usize) -> Vec<Sample<T>> {
    if rows.len() <= lookback {
        return Vec::new();
    }
    let d = rows[0].len();
    (lookback..rows.len())
        .map(|t| {
            let window = DMatrix::from_fn(lookback, d, |s, i| rows[t - lookback + s][i]);
            Sample { window, target: rows[t].clone(), target_index: t }
        })
        .collect()
}

/// Mean squared one-step error over `samples` (averaged over samples and
/// dimensions) and its gradient with respect to every parameter.
pub fn loss_and_gradient<T: Real>(
    params: &TvpVarNetParams<T>,
    samples: &[Sample<T>],
    gated: bool,
) -> (T, TvpVarNetParams<T>) {
    let mut grad = TvpVarNetParams::zeros(params.input_dim(), params.hidden(), params.ar_lags());
    grad.gate = T::zero();
    let denom: T = lit((samples.len() * params.input_dim()) as f64);
    let mut loss = T::zero();
    for s in samples {
        let cache = cell::forward_cached(params, &s.window);
        let err = &cache.output - &s.target;
        loss += err.dot(&err);
        let d_out = err * (lit::<T>(2.0) / denom);
        cell::backward(params, &s.window, &cache, &d_out, &mut grad, gated, false);
    }
    (loss / denom, grad)
}

fn loss_only<T: Real>(params: &TvpVarNetParams<T>, samples: &[Sample<T>]) -> T {
    let denom: T = lit((samples.len() * params.input_dim()) as f64);
    let mut loss = T::zero();
    for s in samples {
        let err = cell::forward(params, &s.window) - &s.target;
        loss += err.dot(&err);
    }
    loss / denom
}

fn mask_gradient<T: Real>(grad: &mut TvpVarNetParams<T>, cfg: &NetConfig) {
    match cfg.branches {
        Branches::Both => {}
        Branches::LstmOnly => grad.zero_ar(),
        Branches::ArOnly => grad.zero_lstm(),
    }
    if !cfg.gated {
        grad.gate = T::zero();
    }
}

struct Split<T: Real> {
    train: Vec<Sample<T>>,
    val: Vec<Sample<T>>,
}

/// Chronological split: targets before the boundary train, the rest validate.
fn split_samples<T: Real>(z: &[DVector<T>], cfg: &NetConfig, boundary: usize) -> Split<T> {
    let (train, val) = sliding_samples(z, cfg.lookback)
        .into_iter()
        .partition(|s| s.target_index < boundary);
    Split { train, val }
}

fn boundary(len: usize, cfg: &NetConfig) -> usize {
    if cfg.validation_fraction == 0.0 {
        return len;
    }
    let raw = ((1.0 - cfg.validation_fraction) * len as f64).round() as usize;
    raw.clamp(cfg.lookback + 1, len.saturating_sub(1).max(cfg.lookback + 1))
}

fn fit_loop<T: Real>(
    start: TvpVarNetParams<T>,
    split: &Split<T>,
    cfg: &NetConfig,
    epochs: usize,
    keep_start_as_candidate: bool,
    rng: &mut ChaCha20Rng,
) -> Result<(TvpVarNetParams<T>, TrainReport)> {
    let clock = Instant::now();
    let has_val = !split.val.is_empty();
    let select = |train: T, val: Option<T>| if has_val { val.unwrap() } else { train };

    let init_train = loss_only(&start, &split.train);
    let init_val = has_val.then(|| loss_only(&start, &split.val));
    if !init_train.is_finite() || init_val.is_some_and(|v| !v.is_finite()) {
        return Err(Error::Divergence { epoch: 0 });
    }

    let mut params = start;
    let mut velocity = TvpVarNetParams::zeros(params.input_dim(), params.hidden(), params.ar_lags());
    velocity.gate = T::zero();
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_score = if keep_start_as_candidate { Some(select(init_train, init_val)) } else { None };

    let lr: T = lit(cfg.learning_rate);
    let mu: T = lit(cfg.momentum);
    let clip: T = lit(cfg.clip_norm);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut train_hist = Vec::with_capacity(epochs);
    let mut val_hist = Vec::with_capacity(epochs);

    for epoch in 1..=epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample<T>> = chunk.iter().map(|&i| split.train[i].clone()).collect();
            let (_, mut grad) = loss_and_gradient(&params, &batch, cfg.gated);
            mask_gradient(&mut grad, cfg);
            let norm = grad.norm_squared().sqrt();
            if !norm.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            if norm > clip {
                grad.scale(clip / norm);
            }
            velocity.scale(mu);
            velocity.scale_add(-lr, &grad);
            params.scale_add(T::one(), &velocity);
        }
        let tl = loss_only(&params, &split.train);
        let vl = has_val.then(|| loss_only(&params, &split.val));
        if !tl.is_finite() || vl.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        train_hist.push(to_f64(tl));
        if let Some(v) = vl {
            val_hist.push(to_f64(v));
        }
        let score = select(tl, vl);
        if best_score.is_none_or(|b| score < b) {
            best_score = Some(score);
            best = params.clone();
            best_epoch = epoch;
        }
    }

    let report = TrainReport {
        initial_train_loss: to_f64(init_train),
        initial_val_loss: init_val.map(to_f64),
        train_loss: train_hist,
        val_loss: val_hist,
        best_epoch,
        wall_time_secs: clock.elapsed().as_secs_f64(),
    };
    Ok((best, report))
}

fn check_trajectory<T: Real>(states: &[DVector<T>], cfg: &NetConfig, min_len: usize) -> Result<()> {
    if states.len() < min_len {
        return Err(Error::Config(format!(
            "trajectory of length {} too short for lookback {}",
            states.len(),
            cfg.lookback
        )));
    }
    if states.iter().any(|s| s.len() != cfg.input_dim) {
        return Err(Error::Shape(format!("trajectory dimension differs from input_dim {}", cfg.input_dim)));
    }
    Ok(())
}

/// Trains from scratch by BPTT with clipped momentum SGD; returns the parameters
/// of the best validation epoch.
pub fn train<T: Real>(
    trajectory: &LatentTrajectory<T>,
    cfg: &NetConfig,
) -> Result<(TvpVarNet<T>, TrainReport)> {
    cfg.validate()?;
    let states = trajectory.states();
    check_trajectory(states, cfg, cfg.lookback + 2)?;
    let cut = boundary(states.len(), cfg);
    let scaler = Scaler::fit(&states[..cut]);
    let z: Vec<_> = states.iter().map(|s| scaler.transform(s)).collect();
    let split = split_samples(&z, cfg, cut);

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut start = TvpVarNetParams::init(cfg, &mut rng);
    match cfg.branches {
        Branches::ArOnly => start.zero_lstm(),
        Branches::LstmOnly | Branches::Both => {}
    }
    let (params, report) = fit_loop(start, &split, cfg, cfg.epochs, false, &mut rng)?;
    Ok((TvpVarNet::new(cfg.clone(), params, scaler)?, report))
}

/// Continues training on new data for `cfg.finetune_epochs` epochs. The scaler
/// and weights of `net` are kept; if no epoch improves the selection loss the
/// starting parameters are returned.
pub fn finetune<T: Real>(
    net: &TvpVarNet<T>,
    new_trajectory: &LatentTrajectory<T>,
    cfg: &NetConfig,
) -> Result<(TvpVarNet<T>, TrainReport)> {
    cfg.validate()?;
    if !cfg.same_architecture(&net.config) {
        return Err(Error::Config("fine-tuning config changes the architecture".into()));
    }
    let states = new_trajectory.states();
    check_trajectory(states, cfg, cfg.lookback + 1)?;
    let z: Vec<_> = states.iter().map(|s| net.scaler.transform(s)).collect();
    let cut = boundary(states.len(), cfg);
    let split = split_samples(&z, cfg, cut);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let (params, report) =
        fit_loop(net.params.clone(), &split, cfg, cfg.finetune_epochs, true, &mut rng)?;
    Ok((TvpVarNet::new(cfg.clone(), params, net.scaler.clone())?, report))
}
