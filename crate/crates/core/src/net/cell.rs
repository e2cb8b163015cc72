//! Forward pass and backpropagation through time for one window.

use nalgebra::{DMatrix, DVector};

use super::TvpVarNetParams;
use crate::scalar::Real;

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

struct StepCache<T: Real> {
    h_prev: DVector<T>,
    c_prev: DVector<T>,
    i: DVector<T>,
    f: DVector<T>,
    g: DVector<T>,
    o: DVector<T>,
    tanh_c: DVector<T>,
}

pub(crate) struct ForwardCache<T: Real> {
    steps: Vec<StepCache<T>>,
    h_last: DVector<T>,
    ar_out: DVector<T>,
    pub(crate) output: DVector<T>,
}

/// Last hidden state after running the cell over all rows, plus per-step caches.
fn run_lstm<T: Real>(
    p: &TvpVarNetParams<T>,
    window: &DMatrix<T>,
    keep: bool,
) -> (DVector<T>, Vec<StepCache<T>>) {
    let hd = p.hidden();
    let mut h = DVector::zeros(hd);
    let mut c = DVector::zeros(hd);
    let mut steps = Vec::with_capacity(if keep { window.nrows() } else { 0 });
    for s in 0..window.nrows() {
        let x = window.row(s).transpose();
        let z = &p.w_in * &x + &p.w_rec * &h + &p.b_gate;
        let i = z.rows(0, hd).map(sigmoid);
        let f = z.rows(hd, hd).map(sigmoid);
        let g = z.rows(2 * hd, hd).map(|v| v.tanh());
        let o = z.rows(3 * hd, hd).map(sigmoid);
        let c_new = f.component_mul(&c) + i.component_mul(&g);
        let tanh_c = c_new.map(|v| v.tanh());
        let h_new = o.component_mul(&tanh_c);
        if keep {
            steps.push(StepCache {
                h_prev: std::mem::replace(&mut h, h_new),
                c_prev: std::mem::replace(&mut c, c_new),
                i,
                f,
                g,
                o,
                tanh_c,
            });
        } else {
            h = h_new;
            c = c_new;
        }
    }
    (h, steps)
}

fn ar_branch<T: Real>(p: &TvpVarNetParams<T>, window: &DMatrix<T>) -> DVector<T> {
    let w = window.nrows();
    DVector::from_fn(p.input_dim(), |i, _| {
        let mut acc = T::zero();
        for k in 1..=p.ar_lags() {
            acc += p.ar_w[(i, k - 1)] * window[(w - k, i)];
        }
        acc + p.ar_b[i]
    })
}

pub(crate) fn forward<T: Real>(p: &TvpVarNetParams<T>, window: &DMatrix<T>) -> DVector<T> {
    let (h, _) = run_lstm(p, window, false);
    let lstm_out = &p.w_out * h + &p.b_out;
    lstm_out + ar_branch(p, window) * p.gate
}

pub(crate) fn forward_cached<T: Real>(
    p: &TvpVarNetParams<T>,
    window: &DMatrix<T>,
) -> ForwardCache<T> {
    let (h_last, steps) = run_lstm(p, window, true);
    let ar_out = ar_branch(p, window);
    let output = &p.w_out * &h_last + &p.b_out + &ar_out * p.gate;
    ForwardCache { steps, h_last, ar_out, output }
}

/// Accumulates `d output / d params` contracted with `d_out` into `grad`, and
/// returns the gradient with respect to the window rows when `want_input` is set.
pub(crate) fn backward<T: Real>(
    p: &TvpVarNetParams<T>,
    window: &DMatrix<T>,
    cache: &ForwardCache<T>,
    d_out: &DVector<T>,
    grad: &mut TvpVarNetParams<T>,
    gated: bool,
    want_input: bool,
) -> Option<DMatrix<T>> {
    let hd = p.hidden();
    let w = window.nrows();
    let mut d_window = want_input.then(|| DMatrix::zeros(w, p.input_dim()));

    // AR branch
    let d_ar = d_out * p.gate;
    if gated {
        grad.gate += d_out.dot(&cache.ar_out);
    }
    for i in 0..p.input_dim() {
        for k in 1..=p.ar_lags() {
            grad.ar_w[(i, k - 1)] += d_ar[i] * window[(w - k, i)];
            if let Some(dw) = d_window.as_mut() {
                dw[(w - k, i)] += p.ar_w[(i, k - 1)] * d_ar[i];
            }
        }
    }
    grad.ar_b += &d_ar;

    // readout
    grad.w_out.ger(T::one(), d_out, &cache.h_last, T::one());
    grad.b_out += d_out;

    let mut dh = p.w_out.tr_mul(d_out);
    let mut dc = DVector::<T>::zeros(hd);
    let mut dz = DVector::<T>::zeros(4 * hd);
    for s in (0..w).rev() {
        let st = &cache.steps[s];
        for j in 0..hd {
            let tc = st.tanh_c[j];
            let d_o = dh[j] * tc;
            dc[j] += dh[j] * st.o[j] * (T::one() - tc * tc);
            let d_i = dc[j] * st.g[j];
            let d_g = dc[j] * st.i[j];
            let d_f = dc[j] * st.c_prev[j];
            dz[j] = d_i * st.i[j] * (T::one() - st.i[j]);
            dz[hd + j] = d_f * st.f[j] * (T::one() - st.f[j]);
            dz[2 * hd + j] = d_g * (T::one() - st.g[j] * st.g[j]);
            dz[3 * hd + j] = d_o * st.o[j] * (T::one() - st.o[j]);
            dc[j] *= st.f[j];
        }
        let x = window.row(s).transpose();
        grad.w_in.ger(T::one(), &dz, &x, T::one());
        grad.w_rec.ger(T::one(), &dz, &st.h_prev, T::one());
        grad.b_gate += &dz;
        if let Some(dw) = d_window.as_mut() {
            let dx = p.w_in.tr_mul(&dz);
            let mut row = dw.row_mut(s);
            row += dx.transpose();
        }
        dh = p.w_rec.tr_mul(&dz);
    }
    d_window
}
