//! Synthetic TVP-VAR data with a known latent random walk:
//!
//! ```text
//! y_t     = X_t' gamma_t + e1_t
//! gamma_t = gamma_{t-1} + e2_t + e3_t
//! ```
//!
//! `X_t` has i.i.d. standard normal entries. The generator is ChaCha20 seeded
//! from a `u64`; per step it draws X (K values), e2 (n), e3 (n), then e1 (q).
//! Steps are numbered from 0 and `gamma_{-1} = gamma0`.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{kron, LatentTrajectory, ObservationSeries, RegressorSeries};
use crate::scalar::{lit, Real};

pub const RNG_ALGORITHM: &str = "chacha20";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Observation dimension.
    pub q: usize,
    /// Latent dimension K q.
    pub n: usize,
    #[serde(rename = "T", alias = "t")]
    pub t: usize,
    pub sigma_obs: f64,
    pub sigma_state: (f64, f64),
    pub seed: u64,
    /// Defaults to zero.
    pub gamma0: Option<Vec<f64>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { q: 10, n: 50, t: 500, sigma_obs: 0.03, sigma_state: (0.01, 0.01), seed: 0, gamma0: None }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.n == 0 || self.t == 0 {
            return Err(Error::Config("q, n and T must be positive".into()));
        }
        if self.n % self.q != 0 {
            return Err(Error::Config(format!("n = {} is not divisible by q = {}", self.n, self.q)));
        }
        let sds = [self.sigma_obs, self.sigma_state.0, self.sigma_state.1];
        if sds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("standard deviations must be finite and non-negative".into()));
        }
        if let Some(g) = &self.gamma0 {
            if g.len() != self.n || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("gamma0 must hold {} finite values", self.n)));
            }
        }
        Ok(())
    }

    /// Regressor dimension K.
    pub fn k(&self) -> usize {
        self.n / self.q
    }

    /// Matched state noise variance `sigma_2^2 + sigma_3^2`.
    pub fn state_variance(&self) -> f64 {
        self.sigma_state.0.powi(2) + self.sigma_state.1.powi(2)
    }

    pub fn obs_variance(&self) -> f64 {
        self.sigma_obs.powi(2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset<T: Real> {
    pub regressors: RegressorSeries<T>,
    pub observations: ObservationSeries<T>,
    pub gamma_true: LatentTrajectory<T>,
    pub config: SynthConfig,
}

impl<T: Real> SyntheticDataset<T> {
    pub fn rng_algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }
}

fn draw<T: Real>(rng: &mut ChaCha20Rng, len: usize, sd: f64) -> DVector<T> {
    DVector::from_fn(len, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        lit(z * sd)
    })
}

pub fn generate<T: Real>(cfg: &SynthConfig) -> Result<SyntheticDataset<T>> {
    cfg.validate()?;
    let (q, n, k) = (cfg.q, cfg.n, cfg.k());
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut gamma: DVector<T> = match &cfg.gamma0 {
        Some(g) => DVector::from_iterator(n, g.iter().map(|v| lit(*v))),
        None => DVector::zeros(n),
    };
    let mut xs = Vec::with_capacity(cfg.t);
    let mut ys = Vec::with_capacity(cfg.t);
    let mut gammas = Vec::with_capacity(cfg.t);
    for _ in 0..cfg.t {
        let x = draw::<T>(&mut rng, k, 1.0);
        let e2 = draw::<T>(&mut rng, n, cfg.sigma_state.0);
        let e3 = draw::<T>(&mut rng, n, cfg.sigma_state.1);
        let e1 = draw::<T>(&mut rng, q, cfg.sigma_obs);
        gamma += e2;
        gamma += e3;
        ys.push(kron::apply(&x, &gamma) + e1);
        xs.push(x);
        gammas.push(gamma.clone());
    }
    Ok(SyntheticDataset {
        regressors: RegressorSeries::exogenous(xs)?,
        observations: ObservationSeries::from_rows(ys)?,
        gamma_true: LatentTrajectory::new(0, gammas)?,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_is_constant() {
        let g0: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect();
        let cfg = SynthConfig {
            q: 2,
            n: 6,
            t: 20,
            sigma_obs: 0.0,
            sigma_state: (0.0, 0.0),
            gamma0: Some(g0.clone()),
            ..SynthConfig::default()
        };
        let ds = generate::<f64>(&cfg).unwrap();
        let g0 = DVector::from_vec(g0);
        for (t, g) in ds.gamma_true.steps() {
            assert_eq!(*g, g0);
            assert_eq!(*ds.observations.row(t), kron::apply(ds.regressors.get(t), &g0));
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig { t: 50, seed: 42, ..SynthConfig::default() };
        assert_eq!(generate::<f64>(&cfg).unwrap(), generate::<f64>(&cfg).unwrap());
        let other = SynthConfig { seed: 43, ..cfg.clone() };
        assert_ne!(generate::<f64>(&cfg).unwrap(), generate::<f64>(&other).unwrap());
    }

    #[test]
    fn increment_variance() {
        let cfg = SynthConfig { q: 1, n: 2, t: 10_000, sigma_state: (0.1, 0.1), seed: 7, ..SynthConfig::default() };
        let ds = generate::<f64>(&cfg).unwrap();
        let states = ds.gamma_true.states();
        for i in 0..2 {
            let inc: Vec<f64> = states.windows(2).map(|w| w[1][i] - w[0][i]).collect();
            let mean = inc.iter().sum::<f64>() / inc.len() as f64;
            let var = inc.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (inc.len() - 1) as f64;
            assert!((var - 0.02).abs() < 0.002, "component {i}: {var}");
        }
    }

    #[test]
    fn regressors_are_standard_normal() {
        let cfg = SynthConfig { q: 1, n: 4, t: 5000, seed: 3, ..SynthConfig::default() };
        let ds = generate::<f64>(&cfg).unwrap();
        let vals: Vec<f64> = ds.regressors.vectors().iter().flat_map(|x| x.iter().copied()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 0.05 && (var - 1.0).abs() < 0.05);
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            SynthConfig { n: 7, q: 2, ..Default::default() },
            SynthConfig { t: 0, ..Default::default() },
            SynthConfig { sigma_obs: -1.0, ..Default::default() },
            SynthConfig { gamma0: Some(vec![0.0; 3]), ..Default::default() },
        ] {
            assert!(matches!(generate::<f64>(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn config_json_uses_capital_t() {
        let cfg: SynthConfig = serde_json::from_str(r#"{"q": 2, "n": 4, "T": 30, "seed": 1}"#).unwrap();
        assert_eq!(cfg.t, 30);
        assert_eq!(cfg.sigma_obs, 0.03);
        assert!(serde_json::to_string(&cfg).unwrap().contains("\"T\":30"));
        assert!(serde_json::from_str::<SynthConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn f32_matches_f64_draws() {
        let cfg = SynthConfig { q: 1, n: 2, t: 5, ..Default::default() };
        let a = generate::<f64>(&cfg).unwrap();
        let b = generate::<f32>(&cfg).unwrap();
        assert_eq!(a.regressors.get(3)[1] as f32, b.regressors.get(3)[1]);
    }
}
