//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The search direction comes from the two-loop recursion over the last `memory`
//! curvature pairs, scaled by `gamma = s'y / y'y` of the newest pair. A Wolfe
//! failure falls back to Armijo backtracking; if that fails too the run stops
//! with [`Termination::LineSearchFailed`]. `memory = 0` gives steepest descent
//! with the same line search.
//!
//! Close to a minimum the predicted decrease drops below the rounding noise of
//! `f`, and the Armijo test can no longer be decided. A trial point is then also
//! accepted when it meets the strong curvature condition and `f <= f(0) + eps`
//! with `eps` a few hundred ulps of `|f(0)|`. Accepted steps therefore never
//! raise `f` by more than that noise allowance.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Infinity-norm gradient threshold.
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { memory: 10, max_iter: 200, grad_tol: 1e-8, c1: 1e-4, c2: 0.9, max_line_search: 40 }
    }
}

impl LbfgsConfig {
    pub fn steepest_descent() -> Self {
        Self { memory: 0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config("line search constants need 0 < c1 < c2 < 1".into()));
        }
        if !(self.grad_tol >= 0.0) || self.max_line_search == 0 {
            return Err(Error::Config("grad_tol must be non-negative and max_line_search positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult<T: Real> {
    pub x_opt: DVector<T>,
    pub f_opt: T,
    /// Infinity norm of the gradient at `x_opt`.
    pub grad_norm: T,
    pub iterations: usize,
    pub converged: bool,
    pub evaluations: usize,
    pub termination: Termination,
}

struct Point<T: Real> {
    alpha: T,
    f: T,
    g: DVector<T>,
    dphi: T,
}

enum Search<T: Real> {
    Wolfe(Point<T>),
    Armijo(Point<T>),
    Failed,
}

/// Minimiser of the cubic matching values and slopes at `a` and `b`.
fn cubic_min<T: Real>(a: T, fa: T, da: T, b: T, fb: T, db: T) -> Option<T> {
    let d1 = da + db - lit::<T>(3.0) * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if !(disc >= T::zero()) {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let den = db - da + lit::<T>(2.0) * d2;
    if den == T::zero() {
        return None;
    }
    let x = b - (b - a) * (db + d2 - d1) / den;
    x.is_finite().then_some(x)
}

struct LineSearch<'a, T: Real, F> {
    objective: &'a mut F,
    x: &'a DVector<T>,
    dir: &'a DVector<T>,
    f0: T,
    dphi0: T,
    c1: T,
    c2: T,
    /// Noise allowance of the approximate Wolfe test.
    eps_f: T,
    budget: usize,
    evaluations: usize,
}

impl<T: Real, F: FnMut(&DVector<T>) -> (T, DVector<T>)> LineSearch<'_, T, F> {
    fn eval(&mut self, alpha: T) -> Point<T> {
        self.evaluations += 1;
        let (f, g) = (self.objective)(&(self.x + self.dir * alpha));
        let dphi = g.dot(self.dir);
        Point { alpha, f, g, dphi }
    }

    fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }

    fn armijo(&self, p: &Point<T>) -> bool {
        p.f <= self.f0 + self.c1 * p.alpha * self.dphi0
    }

    fn curvature(&self, p: &Point<T>) -> bool {
        p.dphi.abs() <= -self.c2 * self.dphi0
    }

    fn approx_wolfe(&self, p: &Point<T>) -> bool {
        p.f <= self.f0 + self.eps_f && self.curvature(p)
    }

    fn wolfe(&mut self, alpha_init: T) -> Option<Point<T>> {
        let mut prev = Point { alpha: T::zero(), f: self.f0, g: DVector::zeros(0), dphi: self.dphi0 };
        let mut alpha = alpha_init;
        let mut first = true;
        while !self.exhausted() {
            let cur = self.eval(alpha);
            if !cur.f.is_finite() || !all_finite(cur.g.iter()) {
                alpha = (prev.alpha + alpha) * lit(0.5);
                continue;
            }
            if self.approx_wolfe(&cur) {
                return Some(cur);
            }
            if !self.armijo(&cur) || (!first && cur.f >= prev.f) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Some(cur);
            }
            if cur.dphi >= T::zero() {
                return self.zoom(cur, prev);
            }
            let lo = cur.alpha * lit(1.1);
            let hi = cur.alpha * lit(10.0);
            alpha = cubic_min(prev.alpha, prev.f, prev.dphi, cur.alpha, cur.f, cur.dphi)
                .map_or(hi, |a| a.max(lo).min(hi));
            prev = cur;
            first = false;
        }
        None
    }

    fn zoom(&mut self, mut lo: Point<T>, mut hi: Point<T>) -> Option<Point<T>> {
        while !self.exhausted() {
            let (a, b) = if lo.alpha < hi.alpha { (lo.alpha, hi.alpha) } else { (hi.alpha, lo.alpha) };
            let width = b - a;
            if !(width > T::default_epsilon() * b.abs().max(T::one())) {
                return None;
            }
            let guard = width * lit(0.1);
            let alpha = cubic_min(lo.alpha, lo.f, lo.dphi, hi.alpha, hi.f, hi.dphi)
                .filter(|x| *x >= a + guard && *x <= b - guard)
                .unwrap_or((a + b) * lit(0.5));
            let cur = self.eval(alpha);
            if cur.f.is_finite() && self.approx_wolfe(&cur) {
                return Some(cur);
            }
            if !cur.f.is_finite() || !self.armijo(&cur) || cur.f >= lo.f {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Some(cur);
                }
                if cur.dphi * (hi.alpha - lo.alpha) >= T::zero() {
                    hi = lo;
                }
                lo = cur;
            }
        }
        None
    }

    fn backtrack(&mut self, alpha_init: T) -> Option<Point<T>> {
        let mut alpha = alpha_init;
        while !self.exhausted() {
            let cur = self.eval(alpha);
            if cur.f.is_finite() && all_finite(cur.g.iter()) && self.armijo(&cur) && cur.f <= self.f0 {
                return Some(cur);
            }
            alpha *= lit(0.5);
        }
        None
    }

    fn run(&mut self, alpha_init: T) -> Search<T> {
        if let Some(p) = self.wolfe(alpha_init) {
            return Search::Wolfe(p);
        }
        self.budget += self.budget;
        match self.backtrack(alpha_init) {
            Some(p) => Search::Armijo(p),
            None => Search::Failed,
        }
    }
}

fn inf_norm<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Two-loop recursion: returns `-H g`.
fn direction<T: Real>(g: &DVector<T>, hist: &VecDeque<(DVector<T>, DVector<T>, T)>) -> DVector<T> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = *rho * s.dot(&q);
        q.axpy(-a, y, T::one());
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = *rho * y.dot(&q);
        q.axpy(*a - b, s, T::one());
    }
    -q
}

/// Minimises `objective`, which returns the value and gradient at a point.
pub fn minimize<T, F>(mut objective: F, x0: &DVector<T>, config: &LbfgsConfig) -> Result<MinimizeResult<T>>
where
    T: Real,
    F: FnMut(&DVector<T>) -> (T, DVector<T>),
{
    config.validate()?;
    let tol: T = lit(config.grad_tol);
    let c1: T = lit(config.c1);
    let c2: T = lit(config.c2);
    let skip_eps: T = lit(1e-10);

    let mut x = x0.clone();
    let (mut f, mut g) = objective(&x);
    let mut evaluations = 1;
    if !f.is_finite() || !all_finite(g.iter()) || g.len() != x.len() {
        return Err(Error::InvalidStart);
    }

    let mut hist: VecDeque<(DVector<T>, DVector<T>, T)> = VecDeque::with_capacity(config.memory);
    let mut iterations = 0;
    let mut prev_step: Option<(T, T)> = None; // (alpha, g'd) of the last accepted step
    let mut termination = Termination::MaxIterations;

    while inf_norm(&g) > tol {
        if iterations >= config.max_iter {
            termination = Termination::MaxIterations;
            break;
        }
        let mut dir = direction(&g, &hist);
        let mut dphi0 = g.dot(&dir);
        if !(dphi0 < T::zero()) {
            hist.clear();
            dir = -&g;
            dphi0 = g.dot(&dir);
        }
        let alpha_init = if !hist.is_empty() {
            T::one()
        } else if let Some((a, gd)) = prev_step {
            (a * gd / dphi0).min(lit(1e10))
        } else {
            (T::one() / g.norm()).min(T::one())
        };

        let mut ls = LineSearch {
            objective: &mut objective,
            x: &x,
            dir: &dir,
            f0: f,
            dphi0,
            c1,
            c2,
            eps_f: f.abs() * T::default_epsilon() * lit(256.0),
            budget: config.max_line_search,
            evaluations: 0,
        };
        let outcome = ls.run(alpha_init);
        evaluations += ls.evaluations;
        let point = match outcome {
            Search::Wolfe(p) => {
                debug_assert!(
                    (p.f <= f + c1 * p.alpha * dphi0 || p.f <= f + f.abs() * T::default_epsilon() * lit(256.0))
                        && p.dphi.abs() <= -c2 * dphi0,
                    "accepted step violates the Wolfe conditions"
                );
                p
            }
            Search::Armijo(p) => p,
            Search::Failed => {
                termination = Termination::LineSearchFailed;
                break;
            }
        };

        let s = &dir * point.alpha;
        let y = &point.g - &g;
        let sy = s.dot(&y);
        if config.memory > 0 && sy > skip_eps * s.norm() * y.norm() {
            if hist.len() == config.memory {
                hist.pop_front();
            }
            hist.push_back((s.clone(), y, T::one() / sy));
        }
        x += s;
        f = point.f;
        g = point.g;
        prev_step = Some((point.alpha, dphi0));
        iterations += 1;
    }

    let grad_norm = inf_norm(&g);
    let converged = grad_norm <= tol;
    if converged {
        termination = Termination::GradientTolerance;
    }
    Ok(MinimizeResult { x_opt: x, f_opt: f, grad_norm, iterations, converged, evaluations, termination })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn quadratic(a: DMatrix<f64>, b: DVector<f64>) -> impl FnMut(&DVector<f64>) -> (f64, DVector<f64>) {
        move |x| {
            let ax = &a * x;
            (0.5 * x.dot(&ax) - b.dot(x), ax - &b)
        }
    }

    #[test]
    fn sphere() {
        let res = minimize(|x: &DVector<f64>| (x.dot(x), x * 2.0), &v(&[3.0, 4.0]), &LbfgsConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.x_opt.amax() < 1e-8);
        assert!(res.iterations <= 3, "{} iterations", res.iterations);
    }

    fn rosenbrock(x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = v(&[-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
        (f, g)
    }

    #[test]
    fn rosenbrock_2d() {
        let res = minimize(rosenbrock, &v(&[-1.2, 1.0]), &LbfgsConfig::default()).unwrap();
        assert!(res.converged, "{res:?}");
        assert!((res.x_opt - v(&[1.0, 1.0])).amax() < 1e-5);
    }

    #[test]
    fn beats_steepest_descent_on_ill_conditioned_quadratic() {
        let obj = |x: &DVector<f64>| (x[0] * x[0] + 1e4 * x[1] * x[1], v(&[2.0 * x[0], 2e4 * x[1]]));
        let cfg = LbfgsConfig { grad_tol: 1e-6, max_iter: 1_000_000, ..Default::default() };
        let lb = minimize(obj, &v(&[1.0, 1.0]), &cfg).unwrap();
        let sd = minimize(obj, &v(&[1.0, 1.0]), &LbfgsConfig { memory: 0, ..cfg }).unwrap();
        assert!(lb.converged && sd.converged);
        assert!(lb.iterations < sd.iterations, "lbfgs {} vs sd {}", lb.iterations, sd.iterations);
    }

    #[test]
    fn monotone_and_records_evaluations() {
        let mut values = Vec::new();
        let res = minimize(
            |x: &DVector<f64>| {
                let r = rosenbrock(x);
                values.push(r.0);
                r
            },
            &v(&[-1.2, 1.0]),
            &LbfgsConfig::default(),
        )
        .unwrap();
        assert_eq!(res.evaluations, values.len());
        assert!(res.f_opt <= values[0]);
    }

    #[test]
    fn invalid_start() {
        let err = minimize(|_x: &DVector<f64>| (f64::NAN, v(&[0.0])), &v(&[0.0]), &LbfgsConfig::default());
        assert!(matches!(err, Err(Error::InvalidStart)));
    }

    #[test]
    fn rejects_bad_wolfe_constants() {
        let cfg = LbfgsConfig { c1: 0.5, c2: 0.4, ..Default::default() };
        assert!(minimize(|x: &DVector<f64>| (x.dot(x), x * 2.0), &v(&[1.0]), &cfg).is_err());
    }

    #[test]
    fn line_search_failure_is_soft() {
        // gradient points the wrong way: no descent is ever found
        let res = minimize(|x: &DVector<f64>| (x[0], v(&[-1.0])), &v(&[0.0]), &LbfgsConfig::default()).unwrap();
        assert!(!res.converged);
        assert_eq!(res.termination, Termination::LineSearchFailed);
    }

    fn random_spd(n: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n)
    }

    #[test]
    fn quadratic_finite_termination_with_exact_search() {
        // c2 small forces an (almost) exact line search; with memory >= n this
        // reproduces conjugate gradients.
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for n in 1..=8 {
            let a = random_spd(n, &mut rng);
            let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let exact = a.clone().cholesky().unwrap().solve(&b);
            let cfg = LbfgsConfig { memory: 10, grad_tol: 1e-10, c2: 1e-6, c1: 1e-7, ..Default::default() };
            let res = minimize(quadratic(a, b), &DVector::zeros(n), &cfg).unwrap();
            assert!(res.converged);
            assert!(res.iterations <= n + 1, "n={n}: {} iterations", res.iterations);
            assert!((res.x_opt - exact).amax() < 1e-10);
        }
    }

    #[test]
    fn orthogonal_change_of_variables() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let n = 6;
        let a = random_spd(n, &mut rng);
        let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let u = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let cfg = LbfgsConfig { grad_tol: 1e-11, ..Default::default() };
        let direct = minimize(quadratic(a.clone(), b.clone()), &x0, &cfg).unwrap();
        // z = U' x
        let at = u.transpose() * &a * &u;
        let bt = u.transpose() * &b;
        let rotated = minimize(quadratic(at, bt), &(u.transpose() * &x0), &cfg).unwrap();
        let gap = (&u * rotated.x_opt - &direct.x_opt).amax();
        assert!(gap < 1e-10, "{gap} {} {}", direct.iterations, rotated.iterations);
    }

    #[test]
    fn runs_in_f32() {
        let cfg = LbfgsConfig { grad_tol: 1e-4, ..Default::default() };
        let res = minimize(|x: &DVector<f32>| (x.dot(x), x * 2.0), &DVector::from_row_slice(&[3.0f32, -1.0]), &cfg).unwrap();
        assert!(res.converged);
        assert!(res.x_opt.amax() < 1e-4);
    }
}
