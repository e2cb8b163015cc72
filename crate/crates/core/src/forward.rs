//! Forward model `F` evolving the latent vector: `beta_t = F(beta_{t-1}) + v_t`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{shape, Error, Result};
use crate::net::TvpVarNet;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub enum ForwardModel<T: Real> {
    /// Random-walk propagation (no-op).
    Identity,
    /// `F beta` for a square Kq×Kq matrix.
    Linear(DMatrix<T>),
    /// One-step prediction of a trained network. `None` is an untrained handle.
    Learned(Option<Arc<TvpVarNet<T>>>),
}

impl<T: Real> Default for ForwardModel<T> {
    fn default() -> Self {
        ForwardModel::Identity
    }
}

impl<T: Real> ForwardModel<T> {
    pub fn linear(f: DMatrix<T>) -> Result<Self> {
        if f.nrows() != f.ncols() || f.nrows() == 0 {
            return Err(shape(format!("linear forward model must be square, got {}x{}", f.nrows(), f.ncols())));
        }
        Ok(ForwardModel::Linear(f))
    }

    pub fn learned(net: TvpVarNet<T>) -> Self {
        ForwardModel::Learned(Some(Arc::new(net)))
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, ForwardModel::Identity)
    }

    fn net(&self) -> Result<&TvpVarNet<T>> {
        match self {
            ForwardModel::Learned(Some(net)) => Ok(net),
            ForwardModel::Learned(None) => Err(Error::ModelNotTrained),
            _ => unreachable!("net() only called on learned models"),
        }
    }

    /// Checks that the model acts on vectors of dimension `n`.
    pub fn check_dim(&self, n: usize) -> Result<()> {
        match self {
            ForwardModel::Identity => Ok(()),
            ForwardModel::Linear(f) if f.nrows() == n => Ok(()),
            ForwardModel::Linear(f) => Err(shape(format!(
                "forward matrix is {}x{}, latent dimension is {n}",
                f.nrows(),
                f.ncols()
            ))),
            ForwardModel::Learned(_) => {
                let net = self.net()?;
                if net.dim() == n {
                    Ok(())
                } else {
                    Err(shape(format!("learned model has dimension {}, latent dimension is {n}", net.dim())))
                }
            }
        }
    }

    /// Noiseless propagation of a single vector. The learned model sees a window
    /// of `lookback` copies of `beta`.
    pub fn apply(&self, beta: &DVector<T>) -> Result<DVector<T>> {
        self.apply_with_history(&[], beta)
    }

    /// Noiseless propagation where the learned model's window is
    /// `[history..., beta]` truncated to the last `lookback` rows, front-padded
    /// with the oldest available row. Identity and Linear ignore `history`.
    pub fn apply_with_history(&self, history: &[DVector<T>], beta: &DVector<T>) -> Result<DVector<T>> {
        self.check_dim(beta.len())?;
        match self {
            ForwardModel::Identity => Ok(beta.clone()),
            ForwardModel::Linear(f) => Ok(f * beta),
            ForwardModel::Learned(_) => {
                let net = self.net()?;
                let seq: Vec<&DVector<T>> = history.iter().chain(std::iter::once(beta)).collect();
                let idx = window_indices(seq.len(), net.lookback());
                net.predict_next(&idx.iter().map(|&i| seq[i]).collect::<Vec<_>>())
            }
        }
    }

    /// `[beta, F beta, ..., F^steps beta]`; for the learned model each step's
    /// window extends `history` with the states produced so far.
    pub fn propagate(
        &self,
        history: &[DVector<T>],
        beta: &DVector<T>,
        steps: usize,
    ) -> Result<Vec<DVector<T>>> {
        let mut states = Vec::with_capacity(steps + 1);
        states.push(beta.clone());
        match self {
            ForwardModel::Learned(_) => {
                let mut ctx: Vec<DVector<T>> = history.to_vec();
                for _ in 0..steps {
                    let cur = states.last().unwrap();
                    let next = self.apply_with_history(&ctx, cur)?;
                    ctx.push(cur.clone());
                    states.push(next);
                }
            }
            _ => {
                for _ in 0..steps {
                    let next = self.apply(states.last().unwrap())?;
                    states.push(next);
                }
            }
        }
        Ok(states)
    }

    /// Adjoint of [`Self::propagate`]: given cotangents `c_k` on each state
    /// `F^k beta`, returns `sum_k (d F^k beta / d beta)' c_k`.
    pub fn propagate_adjoint(
        &self,
        history: &[DVector<T>],
        states: &[DVector<T>],
        cotangents: &[DVector<T>],
    ) -> Result<DVector<T>> {
        if states.len() != cotangents.len() || states.is_empty() {
            return Err(shape("states and cotangents must align"));
        }
        match self {
            ForwardModel::Identity => {
                let mut acc = cotangents[0].clone();
                for c in &cotangents[1..] {
                    acc += c;
                }
                Ok(acc)
            }
            ForwardModel::Linear(f) => {
                // Horner: c_0 + F'(c_1 + F'(c_2 + ...))
                let mut acc = cotangents.last().unwrap().clone();
                for c in cotangents.iter().rev().skip(1) {
                    acc = f.tr_mul(&acc) + c;
                }
                Ok(acc)
            }
            ForwardModel::Learned(_) => {
                let net = self.net()?;
                let h = history.len();
                let mut seq: Vec<&DVector<T>> = history.iter().collect();
                seq.extend(states.iter());
                let mut acc: Vec<DVector<T>> = cotangents.to_vec();
                // state k+1 = net(window ending at state k)
                for k in (0..states.len() - 1).rev() {
                    let idx = window_indices(h + k + 1, net.lookback());
                    let rows: Vec<&DVector<T>> = idx.iter().map(|&i| seq[i]).collect();
                    let grads = net.predict_next_vjp(&rows, &acc[k + 1])?;
                    for (&i, g) in idx.iter().zip(grads) {
                        if i >= h {
                            acc[i - h] += g;
                        }
                    }
                }
                Ok(acc.swap_remove(0))
            }
        }
    }

    /// Dense `F^k` for the linear variants (`None` for the learned model).
    pub fn power(&self, n: usize, k: usize) -> Option<DMatrix<T>> {
        match self {
            ForwardModel::Identity => Some(DMatrix::identity(n, n)),
            ForwardModel::Linear(f) => {
                let mut out = DMatrix::identity(n, n);
                for _ in 0..k {
                    out = f * out;
                }
                Some(out)
            }
            ForwardModel::Learned(_) => None,
        }
    }
}

/// Indices into a sequence of length `len` forming the last `w` rows, padded at
/// the front with index 0.
fn window_indices(len: usize, w: usize) -> Vec<usize> {
    (0..w).map(|s| (len + s).saturating_sub(w)).collect()
}
