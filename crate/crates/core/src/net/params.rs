use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::NetConfig;
use crate::error::{shape, Result};
use crate::scalar::{all_finite, lit, Real};

/// Weights of the two-branch network.
///
/// LSTM gate blocks are stacked in the order input, forget, cell, output: rows
/// `0..H` of `w_in`/`w_rec`/`b_gate` belong to the input gate and so on.
/// `ar_w[(i, k - 1)]` weighs `window[w - k, i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TvpVarNetParams<T: Real> {
    pub w_in: DMatrix<T>,
    pub w_rec: DMatrix<T>,
    pub b_gate: DVector<T>,
    pub w_out: DMatrix<T>,
    pub b_out: DVector<T>,
    pub ar_w: DMatrix<T>,
    pub ar_b: DVector<T>,
    /// Scalar multiplier on the AR branch; fixed at 1 unless the gate is enabled.
    pub gate: T,
}

impl<T: Real> TvpVarNetParams<T> {
    pub fn zeros(d: usize, hidden: usize, ar_lags: usize) -> Self {
        Self {
            w_in: DMatrix::zeros(4 * hidden, d),
            w_rec: DMatrix::zeros(4 * hidden, hidden),
            b_gate: DVector::zeros(4 * hidden),
            w_out: DMatrix::zeros(d, hidden),
            b_out: DVector::zeros(d),
            ar_w: DMatrix::zeros(d, ar_lags),
            ar_b: DVector::zeros(d),
            gate: T::one(),
        }
    }

    /// Gate weights uniform in ±1/sqrt(H), forget bias 1; readout and AR start at zero.
    pub fn init(cfg: &NetConfig, rng: &mut impl Rng) -> Self {
        let h = cfg.hidden;
        let mut p = Self::zeros(cfg.input_dim, h, cfg.ar_lags);
        let bound = 1.0 / (h as f64).sqrt();
        for v in p.w_in.iter_mut().chain(p.w_rec.iter_mut()) {
            *v = lit(rng.random_range(-bound..bound));
        }
        for j in h..2 * h {
            p.b_gate[j] = T::one();
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w_rec.ncols()
    }

    pub fn ar_lags(&self) -> usize {
        self.ar_w.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.w_in.len()
            + self.w_rec.len()
            + self.b_gate.len()
            + self.w_out.len()
            + self.b_out.len()
            + self.ar_w.len()
            + self.ar_b.len()
            + 1
    }

    fn blocks(&self) -> [&[T]; 7] {
        [
            self.w_in.as_slice(),
            self.w_rec.as_slice(),
            self.b_gate.as_slice(),
            self.w_out.as_slice(),
            self.b_out.as_slice(),
            self.ar_w.as_slice(),
            self.ar_b.as_slice(),
        ]
    }

    fn blocks_mut(&mut self) -> [&mut [T]; 7] {
        [
            self.w_in.as_mut_slice(),
            self.w_rec.as_mut_slice(),
            self.b_gate.as_mut_slice(),
            self.w_out.as_mut_slice(),
            self.b_out.as_mut_slice(),
            self.ar_w.as_mut_slice(),
            self.ar_b.as_mut_slice(),
        ]
    }

    /// All parameters in a fixed order (storage order of each block, gate last).
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for b in self.blocks() {
            out.extend_from_slice(b);
        }
        out.push(self.gate);
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for b in self.blocks_mut() {
            let n = b.len();
            b.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        self.gate = flat[off];
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| all_finite(b.iter())) && self.gate.is_finite()
    }

    /// Zeroes every LSTM and readout weight.
    pub fn zero_lstm(&mut self) {
        self.w_in.fill(T::zero());
        self.w_rec.fill(T::zero());
        self.b_gate.fill(T::zero());
        self.w_out.fill(T::zero());
        self.b_out.fill(T::zero());
    }

    pub fn zero_ar(&mut self) {
        self.ar_w.fill(T::zero());
        self.ar_b.fill(T::zero());
    }

    pub(crate) fn scale_add(&mut self, alpha: T, other: &Self) {
        self.w_in += &other.w_in * alpha;
        self.w_rec += &other.w_rec * alpha;
        self.b_gate += &other.b_gate * alpha;
        self.w_out += &other.w_out * alpha;
        self.b_out += &other.b_out * alpha;
        self.ar_w += &other.ar_w * alpha;
        self.ar_b += &other.ar_b * alpha;
        self.gate += other.gate * alpha;
    }

    pub(crate) fn scale(&mut self, alpha: T) {
        self.w_in *= alpha;
        self.w_rec *= alpha;
        self.b_gate *= alpha;
        self.w_out *= alpha;
        self.b_out *= alpha;
        self.ar_w *= alpha;
        self.ar_b *= alpha;
        self.gate *= alpha;
    }

    pub(crate) fn norm_squared(&self) -> T {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .fold(self.gate * self.gate, |acc, v| acc + *v * *v)
    }
}
