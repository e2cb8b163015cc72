//! Windowed variational inference (strong-constraint 3D/4D-Var) for the latent
//! coefficient path.
//!
//! For a window starting at step `t` with background `beta_b` the cost is
//!
//! ```text
//! J(beta) = (beta - beta_b)' Q^{-1} (beta - beta_b)
//!         + sum_j (y_j - x_j' beta_j)' R^{-1} (y_j - x_j' beta_j),   beta_j = F^{j-t} beta
//! ```
//!
//! `window = 1` is 3D-Var. [`run_tvp_var_vi`] walks the series window by
//! window, warm-starting each minimisation at the propagated optimum of the
//! previous one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bench::mse_pairs;
use crate::error::{shape, Error, Result};
use crate::forward::ForwardModel;
use crate::lbfgs::{minimize, LbfgsConfig, MinimizeResult, Termination};
use crate::model::{kron, LatentTrajectory, RegressorSeries};
use crate::noise::NoiseSpec;
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone)]
pub struct VarConfig<T: Real> {
    /// Observations per assimilation window (>= 1).
    pub window: usize,
    pub optimizer: LbfgsConfig,
    pub noise: NoiseSpec<T>,
    pub forward: ForwardModel<T>,
    /// Multiplies the background term. Zero gives a likelihood-only cost.
    pub prior_weight: T,
    /// Multiplies the observation term. Zero gives a prior-only cost.
    pub obs_weight: T,
}

impl<T: Real> VarConfig<T> {
    pub fn new(window: usize, noise: NoiseSpec<T>) -> Self {
        Self {
            window,
            optimizer: LbfgsConfig::default(),
            noise,
            forward: ForwardModel::Identity,
            prior_weight: T::one(),
            obs_weight: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if !(self.prior_weight >= T::zero() && self.obs_weight >= T::zero()) {
            return Err(Error::Config("cost weights must be non-negative".into()));
        }
        self.optimizer.validate()?;
        self.forward.check_dim(self.noise.state_dim())
    }
}

/// Aligned slices of one assimilation window. `history` holds the latent
/// states preceding `start`; only a learned forward model reads it.
#[derive(Debug, Clone, Copy)]
pub struct WindowData<'a, T: Real> {
    pub start: usize,
    pub regressors: &'a [DVector<T>],
    pub observations: &'a [DVector<T>],
    pub history: &'a [DVector<T>],
}

impl<'a, T: Real> WindowData<'a, T> {
    pub fn new(start: usize, regressors: &'a [DVector<T>], observations: &'a [DVector<T>]) -> Result<Self> {
        if regressors.is_empty() || regressors.len() != observations.len() {
            return Err(shape(format!(
                "window needs matching non-empty slices, got {} regressors and {} observations",
                regressors.len(),
                observations.len()
            )));
        }
        Ok(Self { start, regressors, observations, history: &[] })
    }

    pub fn with_history(mut self, history: &'a [DVector<T>]) -> Self {
        self.history = history;
        self
    }

    pub fn len(&self) -> usize {
        self.regressors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regressors.is_empty()
    }
}

fn check_window<T: Real>(beta: &DVector<T>, beta_b: &DVector<T>, w: &WindowData<T>, cfg: &VarConfig<T>) -> Result<()> {
    let n = cfg.noise.state_dim();
    let q = cfg.noise.obs_dim();
    if beta.len() != n || beta_b.len() != n {
        return Err(shape(format!("latent vectors must have dimension {n}")));
    }
    for (x, y) in w.regressors.iter().zip(w.observations) {
        if x.len() * q != n || y.len() != q {
            return Err(shape(format!(
                "regressor of length {} and observation of length {} do not fit latent dimension {n}",
                x.len(),
                y.len()
            )));
        }
    }
    cfg.forward.check_dim(n)
}

/// Cost and gradient in one pass.
pub fn vi_cost_and_gradient<T: Real>(
    beta: &DVector<T>,
    beta_b: &DVector<T>,
    w: &WindowData<T>,
    cfg: &VarConfig<T>,
) -> Result<(T, DVector<T>)> {
    check_window(beta, beta_b, w, cfg)?;
    let two: T = lit(2.0);
    let q_cov = cfg.noise.state.at(w.start)?;
    let r_cov = &cfg.noise.obs;
    let d = beta - beta_b;
    let mut cost = cfg.prior_weight * q_cov.quad_form(&d);
    let mut grad = q_cov.solve(&d) * (two * cfg.prior_weight);

    let states = cfg.forward.propagate(w.history, beta, w.len() - 1)?;
    let mut cot = Vec::with_capacity(w.len());
    for ((x, y), b) in w.regressors.iter().zip(w.observations).zip(&states) {
        let r = y - kron::apply(x, b);
        cost += cfg.obs_weight * r_cov.quad_form(&r);
        cot.push(kron::apply_transpose(x, &r_cov.solve(&r)) * (-two * cfg.obs_weight));
    }
    grad += cfg.forward.propagate_adjoint(w.history, &states, &cot)?;
    Ok((cost, grad))
}

pub fn vi_cost<T: Real>(beta: &DVector<T>, beta_b: &DVector<T>, w: &WindowData<T>, cfg: &VarConfig<T>) -> Result<T> {
    vi_cost_and_gradient(beta, beta_b, w, cfg).map(|(c, _)| c)
}

pub fn vi_gradient<T: Real>(
    beta: &DVector<T>,
    beta_b: &DVector<T>,
    w: &WindowData<T>,
    cfg: &VarConfig<T>,
) -> Result<DVector<T>> {
    vi_cost_and_gradient(beta, beta_b, w, cfg).map(|(_, g)| g)
}

/// Exact minimiser of the (quadratic) window cost for identity or linear `F`,
/// from the normal equations and a Cholesky solve.
pub fn closed_form_minimizer<T: Real>(beta_b: &DVector<T>, w: &WindowData<T>, cfg: &VarConfig<T>) -> Result<DVector<T>> {
    check_window(beta_b, beta_b, w, cfg)?;
    if matches!(cfg.forward, ForwardModel::Learned(_)) {
        return Err(Error::Config("closed-form minimiser needs an identity or linear forward model".into()));
    }
    let n = cfg.noise.state_dim();
    let q_cov = cfg.noise.state.at(w.start)?;
    let r_cov = &cfg.noise.obs;
    let mut lhs = q_cov.precision() * cfg.prior_weight;
    let mut rhs = q_cov.solve(beta_b) * cfg.prior_weight;
    let mut fk = DMatrix::<T>::identity(n, n);
    for (j, (x, y)) in w.regressors.iter().zip(w.observations).enumerate() {
        if j > 0 {
            fk = match &cfg.forward {
                ForwardModel::Identity => fk,
                ForwardModel::Linear(f) => f * fk,
                ForwardModel::Learned(_) => unreachable!(),
            };
        }
        let a = kron::apply_matrix(x, &fk);
        let ra = r_cov.solve_matrix(&a);
        lhs += a.tr_mul(&ra) * cfg.obs_weight;
        rhs += ra.tr_mul(y) * cfg.obs_weight;
    }
    let lhs = (&lhs + lhs.transpose()) * lit::<T>(0.5);
    let chol = lhs.cholesky().ok_or(Error::DegenerateWindow { start: w.start })?;
    Ok(chol.solve(&rhs))
}

/// Minimises one window cost with L-BFGS from `x0`.
pub fn minimize_window<T: Real>(
    beta_b: &DVector<T>,
    x0: &DVector<T>,
    w: &WindowData<T>,
    cfg: &VarConfig<T>,
) -> Result<MinimizeResult<T>> {
    check_window(x0, beta_b, w, cfg)?;
    let mut failure = None;
    let res = minimize(
        |b: &DVector<T>| match vi_cost_and_gradient(b, beta_b, w, cfg) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                (lit::<T>(f64::NAN), DVector::from_element(b.len(), lit::<T>(f64::NAN)))
            }
        },
        x0,
        &cfg.optimizer,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    res
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub start: usize,
    pub len: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
    pub cost: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct ViResult<T: Real> {
    /// Optimum at each window start, propagated values inside the window.
    pub trajectory: LatentTrajectory<T>,
    /// `(aligned step, ŷ)` for every step predicted from an earlier window start.
    pub one_step_forecasts: Vec<(usize, DVector<T>)>,
    pub mse: T,
    pub per_window_stats: Vec<WindowStats>,
}

impl<T: Real> ViResult<T> {
    pub fn total_iterations(&self) -> usize {
        self.per_window_stats.iter().map(|s| s.iterations).sum()
    }
}

/// Runs the windowed engine over aligned regressors and observations.
/// `beta_b0` defaults to zero.
pub fn run_tvp_var_vi<T: Real>(
    regressors: &RegressorSeries<T>,
    observations: &[DVector<T>],
    cfg: &VarConfig<T>,
    beta_b0: Option<&DVector<T>>,
) -> Result<ViResult<T>> {
    cfg.validate()?;
    let len = regressors.len();
    if observations.len() != len {
        return Err(shape(format!("{} observations for {len} regressor vectors", observations.len())));
    }
    if len < cfg.window {
        return Err(Error::Config(format!("{len} steps is shorter than window {}", cfg.window)));
    }
    let n = cfg.noise.state_dim();
    let mut beta_b = beta_b0.cloned().unwrap_or_else(|| DVector::zeros(n));
    if beta_b.len() != n {
        return Err(shape(format!("background has dimension {}, expected {n}", beta_b.len())));
    }

    let mut trajectory: Vec<DVector<T>> = Vec::with_capacity(len);
    let mut forecasts = Vec::with_capacity(len);
    let mut stats = Vec::new();
    let mut t = 0;
    while t < len {
        let end = (t + cfg.window).min(len);
        let w = WindowData::new(t, &regressors.vectors()[t..end], &observations[t..end])?
            .with_history(&trajectory);
        let res = minimize_window(&beta_b, &beta_b, &w, cfg).map_err(|e| e.at_step(t))?;
        stats.push(WindowStats {
            start: t,
            len: end - t,
            iterations: res.iterations,
            evaluations: res.evaluations,
            converged: res.converged,
            termination: res.termination,
            cost: to_f64(res.f_opt),
            grad_norm: to_f64(res.grad_norm),
        });
        let mut states = cfg
            .forward
            .propagate(&trajectory, &res.x_opt, end - t)
            .map_err(|e| e.at_step(t))?;
        let next = states.pop().expect("propagate returns steps + 1 states");
        for (i, b) in states.iter().enumerate().skip(1) {
            forecasts.push((t + i, kron::apply(regressors.get(t + i), b)));
        }
        if end < len {
            forecasts.push((end, kron::apply(regressors.get(end), &next)));
        }
        trajectory.extend(states);
        beta_b = next;
        t = end;
    }

    let mse = mse_pairs(&forecasts, observations)?;
    Ok(ViResult {
        trajectory: LatentTrajectory::new(regressors.offset(), trajectory)?,
        one_step_forecasts: forecasts,
        mse,
        per_window_stats: stats,
    })
}
