//! Kalman versus variational timing harness and the forecast metric.

use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::kalman::kalman_filter;
use crate::lbfgs::LbfgsConfig;
use crate::noise::NoiseSpec;
use crate::scalar::{lit, to_f64, Real};
use crate::synth::{generate, SynthConfig, RNG_ALGORITHM};
use crate::varinf::{run_tvp_var_vi, VarConfig};
use crate::ForwardModel;

/// Mean over steps and components of the squared forecast error.
pub fn mse<T: Real>(forecasts: &[DVector<T>], observations: &[DVector<T>]) -> Result<T> {
    if forecasts.len() != observations.len() {
        return Err(shape(format!("{} forecasts for {} observations", forecasts.len(), observations.len())));
    }
    if forecasts.is_empty() {
        return Err(shape("no forecasts to score"));
    }
    let mut sum = T::zero();
    let mut count = 0usize;
    for (f, y) in forecasts.iter().zip(observations) {
        if f.len() != y.len() {
            return Err(shape(format!("forecast of length {} for observation of length {}", f.len(), y.len())));
        }
        sum += (f - y).norm_squared();
        count += f.len();
    }
    Ok(sum / T::from_usize(count).expect("count fits the scalar type"))
}

/// [`mse`] over `(step, forecast)` pairs; NaN when there are none.
pub(crate) fn mse_pairs<T: Real>(forecasts: &[(usize, DVector<T>)], observations: &[DVector<T>]) -> Result<T> {
    if forecasts.is_empty() {
        return Ok(lit::<T>(f64::NAN));
    }
    let mut obs = Vec::with_capacity(forecasts.len());
    for (s, _) in forecasts {
        obs.push(observations.get(*s).cloned().ok_or_else(|| shape(format!("forecast for missing step {s}")))?);
    }
    let f: Vec<DVector<T>> = forecasts.iter().map(|(_, f)| f.clone()).collect();
    mse(&f, &obs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// `(q, n)` pairs; n is the latent dimension.
    pub dims: Vec<(usize, usize)>,
    pub windows: Vec<usize>,
    #[serde(rename = "T", alias = "t")]
    pub t: usize,
    pub repetitions: usize,
    pub seed: u64,
    /// Run cells on worker threads. Timings are noisier.
    pub parallel: bool,
    pub sigma_obs: f64,
    pub sigma_state: (f64, f64),
    pub optimizer: LbfgsConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            dims: vec![(5, 10), (5, 50), (5, 100)],
            windows: vec![1, 2, 5],
            t: 200,
            repetitions: 5,
            seed: 0,
            parallel: false,
            sigma_obs: synth.sigma_obs,
            sigma_state: synth.sigma_state,
            optimizer: LbfgsConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.windows.is_empty() {
            return Err(Error::Config("dims and windows must be non-empty".into()));
        }
        if self.dims.iter().any(|&(q, n)| q == 0 || n == 0 || n % q != 0) {
            return Err(Error::Config("every (q, n) needs q, n >= 1 with q dividing n".into()));
        }
        if self.windows.contains(&0) || self.repetitions == 0 || self.t == 0 {
            return Err(Error::Config("windows, repetitions and T must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    /// Seed of the dataset for cell `index` (position in `dims`).
    pub fn cell_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kalman,
    Vi,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Kalman => "kalman",
            Method::Vi => "vi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub q: usize,
    pub n: usize,
    /// `None` for the (window-free) Kalman engine.
    pub window: Option<usize>,
    pub median_seconds: f64,
    pub mse: f64,
    /// Total L-BFGS iterations of one VI run.
    pub iterations: Option<usize>,
    /// Set when the cell failed; the numeric fields are then NaN.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMetadata {
    pub arch: String,
    pub os: String,
    pub threads: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub rng: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
    pub metadata: BenchMetadata,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

fn timed<R>(reps: usize, mut f: impl FnMut() -> Result<R>) -> Result<(f64, R)> {
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps {
        let start = Instant::now();
        let out = f()?;
        // clamp so that a sub-resolution run still reports a positive time
        times.push(start.elapsed().as_secs_f64().max(1e-9));
        last = Some(out);
    }
    Ok((median(times), last.expect("at least one repetition")))
}

fn failed(method: Method, q: usize, n: usize, window: Option<usize>, e: &Error) -> BenchRow {
    BenchRow {
        method,
        q,
        n,
        window,
        median_seconds: f64::NAN,
        mse: f64::NAN,
        iterations: None,
        error: Some(e.to_string()),
    }
}

fn run_cell(cfg: &BenchConfig, index: usize) -> Vec<BenchRow> {
    let (q, n) = cfg.dims[index];
    let synth = SynthConfig {
        q,
        n,
        t: cfg.t,
        sigma_obs: cfg.sigma_obs,
        sigma_state: cfg.sigma_state,
        seed: cfg.cell_seed(index),
        gamma0: None,
    };
    let mut rows = Vec::with_capacity(1 + cfg.windows.len());
    let ds = match generate::<f64>(&synth) {
        Ok(ds) => ds,
        Err(e) => {
            rows.push(failed(Method::Kalman, q, n, None, &e));
            rows.extend(cfg.windows.iter().map(|&w| failed(Method::Vi, q, n, Some(w), &e)));
            return rows;
        }
    };
    let noise = NoiseSpec::isotropic(n, synth.state_variance(), q, synth.obs_variance());
    let noise = match noise {
        Ok(noise) => noise,
        Err(e) => {
            rows.push(failed(Method::Kalman, q, n, None, &e));
            rows.extend(cfg.windows.iter().map(|&w| failed(Method::Vi, q, n, Some(w), &e)));
            return rows;
        }
    };
    let obs = ds.observations.rows();
    let forward = ForwardModel::Identity;

    let kalman = timed(cfg.repetitions, || kalman_filter(&ds.regressors, obs, &forward, &noise, None));
    rows.push(match kalman {
        Ok((secs, res)) => BenchRow {
            method: Method::Kalman,
            q,
            n,
            window: None,
            median_seconds: secs,
            mse: to_f64(res.mse),
            iterations: None,
            error: None,
        },
        Err(e) => failed(Method::Kalman, q, n, None, &e),
    });

    for &window in &cfg.windows {
        let mut vc = VarConfig::new(window, noise.clone());
        vc.optimizer = cfg.optimizer;
        let vi = timed(cfg.repetitions, || run_tvp_var_vi(&ds.regressors, obs, &vc, None));
        rows.push(match vi {
            Ok((secs, res)) => BenchRow {
                method: Method::Vi,
                q,
                n,
                window: Some(window),
                median_seconds: secs,
                mse: to_f64(res.mse),
                iterations: Some(res.total_iterations()),
                error: None,
            },
            Err(e) => failed(Method::Vi, q, n, Some(window), &e),
        });
    }
    rows
}

/// Runs every cell; failures are recorded in their rows and do not stop the run.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchTable> {
    cfg.validate()?;
    let threads = if cfg.parallel {
        std::thread::available_parallelism().map_or(1, |n| n.get()).min(cfg.dims.len())
    } else {
        1
    };
    let rows = if threads > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..cfg.dims.len()).map(|i| s.spawn(move || run_cell(cfg, i))).collect();
            handles.into_iter().flat_map(|h| h.join().expect("benchmark worker panicked")).collect()
        })
    } else {
        (0..cfg.dims.len()).flat_map(|i| run_cell(cfg, i)).collect()
    };
    Ok(BenchTable {
        rows,
        metadata: BenchMetadata {
            arch: std::env::consts::ARCH.to_string(),
            os: std::env::consts::OS.to_string(),
            threads,
            t: cfg.t,
            repetitions: cfg.repetitions,
            seed: cfg.seed,
            rng: RNG_ALGORITHM.to_string(),
        },
    })
}

const BENCH_HEADER: [&str; 8] = ["method", "q", "n", "window", "median_seconds", "mse", "iterations", "error"];

/// Writes the rows as CSV. Floats use the shortest representation that round
/// trips; empty cells mean "not applicable".
pub fn write_bench_csv<W: Write>(table: &BenchTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCH_HEADER)?;
    for r in &table.rows {
        w.write_record([
            r.method.as_str().to_string(),
            r.q.to_string(),
            r.n.to_string(),
            r.window.map(|v| v.to_string()).unwrap_or_default(),
            r.median_seconds.to_string(),
            r.mse.to_string(),
            r.iterations.map(|v| v.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_field<F: std::str::FromStr>(s: &str, row: u64, column: &str) -> Result<F> {
    s.parse().map_err(|_| Error::Value { row, message: format!("cannot parse {column} = {s:?}") })
}

fn opt_field<F: std::str::FromStr>(s: &str, row: u64, column: &str) -> Result<Option<F>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_field(s, row, column).map(Some)
    }
}

/// Reads rows written by [`write_bench_csv`].
pub fn read_bench_csv<R: Read>(input: R) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if let Some(missing) = BENCH_HEADER.iter().find(|h| !headers.iter().any(|x| x == **h)) {
        return Err(Error::Schema { column: missing.to_string() });
    }
    let col = |name: &str| headers.iter().position(|h| h == name).expect("checked above");
    let idx: Vec<usize> = BENCH_HEADER.iter().map(|h| col(h)).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let f = |k: usize| rec.get(idx[k]).unwrap_or("");
        let method = match f(0) {
            "kalman" => Method::Kalman,
            "vi" => Method::Vi,
            other => return Err(Error::Value { row: line, message: format!("unknown method {other:?}") }),
        };
        rows.push(BenchRow {
            method,
            q: parse_field(f(1), line, "q")?,
            n: parse_field(f(2), line, "n")?,
            window: opt_field(f(3), line, "window")?,
            median_seconds: parse_field(f(4), line, "median_seconds")?,
            mse: parse_field(f(5), line, "mse")?,
            iterations: opt_field(f(6), line, "iterations")?,
            error: Some(f(7).to_string()).filter(|s| !s.is_empty()),
        });
    }
    Ok(rows)
}
