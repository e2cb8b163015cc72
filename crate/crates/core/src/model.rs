//! TVP-VAR state-space data model.
//!
//! Observations `y_t` (q-vectors) are linked to the stacked coefficient vector
//! `beta_t = vec(Phi_t)` (length `K*q`) through `y_t = x_t' beta_t + noise`, where
//! `x_t = I_q ⊗ X_t` lifts the K-vector of lagged regressors. The lift is never
//! materialised: see [`kron`].

use nalgebra::{DMatrix, DVector};

use crate::error::{shape, Error, Result};
use crate::scalar::{all_finite, Real};

/// T×q matrix of observed variables, stored row-per-step.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries<T: Real> {
    rows: Vec<DVector<T>>,
    timestamps: Option<Vec<i64>>,
}

impl<T: Real> ObservationSeries<T> {
    pub fn from_rows(rows: Vec<DVector<T>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidData("observation series is empty".into()));
        }
        let q = rows[0].len();
        if q == 0 {
            return Err(Error::InvalidData("observation dimension is zero".into()));
        }
        for (t, r) in rows.iter().enumerate() {
            if r.len() != q {
                return Err(shape(format!("row {t} has length {}, expected {q}", r.len())));
            }
            if !all_finite(r.iter()) {
                return Err(Error::InvalidData(format!("non-finite value at step {t}")));
            }
        }
        Ok(Self { rows, timestamps: None })
    }

    /// Builds the series from a T×q matrix (rows are time steps).
    pub fn from_matrix(data: &DMatrix<T>) -> Result<Self> {
        let rows = (0..data.nrows()).map(|t| data.row(t).transpose()).collect();
        Self::from_rows(rows)
    }

    pub fn with_timestamps(mut self, timestamps: Vec<i64>) -> Result<Self> {
        if timestamps.len() != self.rows.len() {
            return Err(shape("timestamps length differs from data length"));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidData("timestamps not strictly increasing".into()));
        }
        self.timestamps = Some(timestamps);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Observation dimension q.
    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, t: usize) -> &DVector<T> {
        &self.rows[t]
    }

    pub fn rows(&self) -> &[DVector<T>] {
        &self.rows
    }

    pub fn timestamps(&self) -> Option<&[i64]> {
        self.timestamps.as_deref()
    }

    pub fn to_matrix(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.len(), self.dim(), |t, i| self.rows[t][i])
    }

    /// Sub-series of steps `from..` (timestamps follow).
    pub fn tail_from(&self, from: usize) -> Result<Self> {
        let rows = self.rows[from.min(self.len())..].to_vec();
        let mut out = Self::from_rows(rows)?;
        out.timestamps = self.timestamps.as_ref().map(|ts| ts[from..].to_vec());
        Ok(out)
    }
}

/// Per-step regressor vectors `X_t` of dimension K.
///
/// `offset` is the index of the source step that `vectors[0]` explains. Series
/// built from lags have `offset == lag`; exogenous draws (synthetic data) use
/// `lag == 0` and `offset == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorSeries<T: Real> {
    vectors: Vec<DVector<T>>,
    lag: usize,
    intercept: bool,
    dim: usize,
    offset: usize,
}

impl<T: Real> RegressorSeries<T> {
    /// Wraps exogenous regressor draws.
    pub fn exogenous(vectors: Vec<DVector<T>>) -> Result<Self> {
        let dim = vectors.first().map(|v| v.len()).unwrap_or(0);
        if dim == 0 {
            return Err(Error::InvalidData("empty regressor series".into()));
        }
        for (t, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(shape(format!("regressor {t} has length {}, expected {dim}", v.len())));
            }
            if !all_finite(v.iter()) {
                return Err(Error::InvalidData(format!("non-finite regressor at step {t}")));
            }
        }
        Ok(Self { vectors, lag: 0, intercept: false, dim, offset: 0 })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Regressor dimension K.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn intercept(&self) -> bool {
        self.intercept
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn get(&self, t: usize) -> &DVector<T> {
        &self.vectors[t]
    }

    pub fn vectors(&self) -> &[DVector<T>] {
        &self.vectors
    }
}

/// Stacks `y_{t-1}, ..., y_{t-lag}` (then a trailing 1 when `intercept`) for every
/// `t = lag..T`.
pub fn build_regressors<T: Real>(
    y: &ObservationSeries<T>,
    lag: usize,
    intercept: bool,
) -> Result<RegressorSeries<T>> {
    if lag == 0 {
        return Err(Error::Config("lag must be at least 1".into()));
    }
    let len = y.len();
    if lag >= len {
        return Err(Error::InsufficientHistory { lag, len });
    }
    if !y.rows().iter().all(|r| all_finite(r.iter())) {
        return Err(Error::InvalidData("non-finite observation".into()));
    }
    let q = y.dim();
    let dim = q * lag + usize::from(intercept);
    let vectors = (lag..len)
        .map(|t| {
            let mut x = DVector::zeros(dim);
            for l in 1..=lag {
                x.rows_mut((l - 1) * q, q).copy_from(y.row(t - l));
            }
            if intercept {
                x[dim - 1] = T::one();
            }
            x
        })
        .collect();
    Ok(RegressorSeries { vectors, lag, intercept, dim, offset: lag })
}

/// Column-major stacking of a K×q coefficient matrix.
pub fn vec<T: Real>(phi: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(phi.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec<T: Real>(beta: &DVector<T>, k: usize, q: usize) -> Result<DMatrix<T>> {
    if k * q != beta.len() {
        return Err(shape(format!("cannot reshape {} values into {k}x{q}", beta.len())));
    }
    Ok(DMatrix::from_column_slice(k, q, beta.as_slice()))
}

/// `ŷ = x_t' beta` with `x_t = I_q ⊗ X_t`, computed as `Phi' X_t`.
pub fn predict_observation<T: Real>(x: &DVector<T>, beta: &DVector<T>) -> Result<DVector<T>> {
    let k = x.len();
    if k == 0 || beta.len() % k != 0 || beta.is_empty() {
        return Err(shape(format!(
            "latent dimension {} is not a multiple of regressor dimension {k}",
            beta.len()
        )));
    }
    Ok(kron::apply(x, beta))
}

/// Latent trajectory: `states[i]` is the coefficient vector at step `start + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrajectory<T: Real> {
    start: usize,
    states: Vec<DVector<T>>,
}

impl<T: Real> LatentTrajectory<T> {
    pub fn new(start: usize, states: Vec<DVector<T>>) -> Result<Self> {
        if let Some(first) = states.first() {
            let n = first.len();
            if let Some(i) = states.iter().position(|s| s.len() != n) {
                return Err(shape(format!("state {i} has inconsistent dimension")));
            }
        }
        Ok(Self { start, states })
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn states(&self) -> &[DVector<T>] {
        &self.states
    }

    pub fn steps(&self) -> impl Iterator<Item = (usize, &DVector<T>)> {
        self.states.iter().enumerate().map(move |(i, s)| (self.start + i, s))
    }

    pub fn into_states(self) -> Vec<DVector<T>> {
        self.states
    }

    /// States as a len×n matrix.
    pub fn to_matrix(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.len(), self.dim(), |t, i| self.states[t][i])
    }
}

/// Kronecker-structured observation operator `H = x_t' = I_q ⊗ X_t'` applied
/// without forming the Kq×q lift. Accumulation order is sequential over the
/// regressor index in every routine.
pub mod kron {
    use super::*;

    /// `H v`: q-vector with entry i equal to `X · v[iK..(i+1)K]`.
    pub fn apply<T: Real>(x: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        let k = x.len();
        let q = v.len() / k;
        DVector::from_fn(q, |i, _| {
            let mut acc = T::zero();
            for j in 0..k {
                acc += x[j] * v[i * k + j];
            }
            acc
        })
    }

    /// `H' w`: Kq-vector with block i equal to `w_i X`.
    pub fn apply_transpose<T: Real>(x: &DVector<T>, w: &DVector<T>) -> DVector<T> {
        let k = x.len();
        DVector::from_fn(k * w.len(), |r, _| w[r / k] * x[r % k])
    }

    /// `H M` for a Kq×c matrix M, giving q×c.
    pub fn apply_matrix<T: Real>(x: &DVector<T>, m: &DMatrix<T>) -> DMatrix<T> {
        let k = x.len();
        let q = m.nrows() / k;
        DMatrix::from_fn(q, m.ncols(), |i, c| {
            let mut acc = T::zero();
            for j in 0..k {
                acc += x[j] * m[(i * k + j, c)];
            }
            acc
        })
    }

    /// `P H'` for a Kq×Kq matrix P, giving Kq×q.
    pub fn right_apply_transpose<T: Real>(p: &DMatrix<T>, x: &DVector<T>) -> DMatrix<T> {
        let k = x.len();
        let q = p.ncols() / k;
        DMatrix::from_fn(p.nrows(), q, |r, i| {
            let mut acc = T::zero();
            for j in 0..k {
                acc += p[(r, i * k + j)] * x[j];
            }
            acc
        })
    }
}
