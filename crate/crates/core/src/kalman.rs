//! Sequential Kalman filter for the TVP-VAR state space.
//!
//! The observation operator `H_t = I_q ⊗ X_t'` is applied through
//! [`crate::model::kron`]; the innovation covariance is factorised, never inverted.

use nalgebra::{DMatrix, DVector};

use crate::bench::mse;
use crate::error::{shape, Error, Result};
use crate::forward::ForwardModel;
use crate::model::{kron, LatentTrajectory, RegressorSeries};
use crate::noise::{Covariance, NoiseSpec};
use crate::scalar::{all_finite, lit, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState<T: Real> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: Real> KalmanState<T> {
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(shape("state covariance must be n x n for a mean of length n"));
        }
        Ok(Self { mean, cov })
    }

    /// Zero mean, identity covariance.
    pub fn standard(n: usize) -> Self {
        Self { mean: DVector::zeros(n), cov: DMatrix::identity(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub(crate) fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// `mean' = F mean`, `cov' = F cov F' + Q`.
pub fn kalman_predict<T: Real>(
    state: &KalmanState<T>,
    forward: &ForwardModel<T>,
    q: &Covariance<T>,
) -> Result<KalmanState<T>> {
    let n = state.dim();
    if q.dim() != n {
        return Err(shape(format!("Q is {0}x{0}, state dimension is {n}", q.dim())));
    }
    forward.check_dim(n)?;
    let (mean, mut cov) = match forward {
        ForwardModel::Identity => (state.mean.clone(), state.cov.clone()),
        ForwardModel::Linear(f) => (f * &state.mean, symmetrize(&(f * &state.cov * f.transpose()))),
        ForwardModel::Learned(_) => {
            return Err(Error::Config("the Kalman engine requires a linear forward model".into()))
        }
    };
    q.add_to(&mut cov);
    Ok(KalmanState { mean, cov })
}

/// Output of a measurement update.
#[derive(Debug, Clone)]
pub struct UpdateOutput<T: Real> {
    pub state: KalmanState<T>,
    /// Kq×q gain.
    pub gain: DMatrix<T>,
    /// `y_t - H_t mean`.
    pub innovation: DVector<T>,
}

/// Measurement update at `step` (used only to annotate failures).
pub fn kalman_update<T: Real>(
    state: &KalmanState<T>,
    x: &DVector<T>,
    y: &DVector<T>,
    r: &Covariance<T>,
    step: usize,
) -> Result<UpdateOutput<T>> {
    let n = state.dim();
    let k = x.len();
    let q = y.len();
    if k == 0 || k * q != n || r.dim() != q {
        return Err(shape(format!(
            "update dimensions disagree: n={n}, K={k}, q={q}, R is {0}x{0}",
            r.dim()
        )));
    }
    if !all_finite(y.iter()) || !all_finite(x.iter()) {
        return Err(Error::InvalidData(format!("non-finite observation at step {step}")));
    }
    let p = &state.cov;
    let pht = kron::right_apply_transpose(p, x);
    let mut s = kron::apply_matrix(x, &pht);
    r.add_to(&mut s);
    let s = symmetrize(&s);
    let chol = s.cholesky().ok_or(Error::SingularInnovation { step })?;
    let innovation = y - kron::apply(x, &state.mean);
    let gain = chol.solve(&pht.transpose()).transpose();
    let mean = &state.mean + &gain * &innovation;
    let cov = symmetrize(&(p - &gain * pht.transpose()));
    Ok(UpdateOutput { state: KalmanState { mean, cov }, gain, innovation })
}

#[derive(Debug, Clone)]
pub struct FilterResult<T: Real> {
    /// Posterior means `m_{t|t}`.
    pub trajectory: LatentTrajectory<T>,
    /// Prior means `m_{t|t-1}`.
    pub predicted_means: Vec<DVector<T>>,
    /// Prior covariances `P_{t|t-1}`.
    pub predicted_covs: Vec<DMatrix<T>>,
    /// `ŷ_t = H_t m_{t|t-1}`, one per step.
    pub one_step_forecasts: Vec<DVector<T>>,
    pub mse: T,
    pub final_state: KalmanState<T>,
}

/// Runs predict → forecast → update over every step. `initial` defaults to
/// zero mean and identity covariance.
pub fn kalman_filter<T: Real>(
    regressors: &RegressorSeries<T>,
    observations: &[DVector<T>],
    forward: &ForwardModel<T>,
    noise: &NoiseSpec<T>,
    initial: Option<KalmanState<T>>,
) -> Result<FilterResult<T>> {
    let len = regressors.len();
    if observations.len() != len {
        return Err(shape(format!(
            "{} observations for {len} regressor vectors",
            observations.len()
        )));
    }
    let n = noise.state_dim();
    let mut state = initial.unwrap_or_else(|| KalmanState::standard(n));
    if state.dim() != n {
        return Err(shape("initial state dimension differs from Q"));
    }
    let mut posterior = Vec::with_capacity(len);
    let mut predicted_means = Vec::with_capacity(len);
    let mut predicted_covs = Vec::with_capacity(len);
    let mut forecasts = Vec::with_capacity(len);
    for t in 0..len {
        let q = noise.state.at(t).map_err(|e| e.at_step(t))?;
        let prior = kalman_predict(&state, forward, q).map_err(|e| e.at_step(t))?;
        let x = regressors.get(t);
        forecasts.push(kron::apply(x, &prior.mean));
        let upd = kalman_update(&prior, x, &observations[t], &noise.obs, t).map_err(|e| e.at_step(t))?;
        predicted_means.push(prior.mean);
        predicted_covs.push(prior.cov);
        posterior.push(upd.state.mean.clone());
        state = upd.state;
    }
    let mse = mse(&forecasts, observations)?;
    Ok(FilterResult {
        trajectory: LatentTrajectory::new(regressors.offset(), posterior)?,
        predicted_means,
        predicted_covs,
        one_step_forecasts: forecasts,
        mse,
        final_state: state,
    })
}
