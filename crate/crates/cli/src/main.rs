//! `tvpvar` command-line tool.
//!
//! Every subcommand writes its primary output plus a JSON run report that echoes
//! the effective configuration. Failures print one JSON line
//! `{"error": <kind>, "message": <text>}` to stderr and exit with status 1.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use tvpvar::bench::{run_benchmark, write_bench_csv, BenchConfig};
use tvpvar::dataset::{
    read_data_csv, read_trajectory_csv, write_data_csv, write_forecasts_csv,
    write_vectors_csv, DataTable,
};
use tvpvar::ingest::{
    ingest, panel_metadata, parse_off_chain_csv, parse_on_chain_csv, to_var_dataset, write_panel_csv,
    IngestOptions, MissingPolicy,
};
use tvpvar::kalman::{kalman_filter, KalmanState};
use tvpvar::lbfgs::LbfgsConfig;
use tvpvar::net::{load_params, save_params, train, NetConfig};
use tvpvar::synth::{generate, SynthConfig, RNG_ALGORITHM};
use tvpvar::varinf::{run_tvp_var_vi, VarConfig, WindowStats};
use tvpvar::{ForwardModel, LatentTrajectory, NoiseSpec};

#[derive(Parser)]
#[command(name = "tvpvar", version, about = "Kalman and variational inference for TVP-VAR models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its true latent path.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate the latent path of a dataset.
    Infer {
        #[arg(long, value_enum)]
        method: Method,
        /// Observations per assimilation window (VI only, default 1).
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// JSON with noise variances, optimiser settings and initial state.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        q_var: Option<f64>,
        #[arg(long)]
        r_var: Option<f64>,
        /// Trained network used as the VI forward model.
        #[arg(long)]
        forward_net: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Time both engines over a grid of problem sizes.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the surrogate forward model on a latent path CSV.
    TrainNet {
        #[arg(long)]
        beta: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Closed-loop latent forecast from a trained network.
    Forecast {
        #[arg(long)]
        params: PathBuf,
        /// Latent path CSV; its last `lookback` rows seed the forecast.
        #[arg(long)]
        seed_window: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Join exchange and ledger exports into a standardised panel.
    Ingest {
        #[arg(long)]
        off_chain: PathBuf,
        #[arg(long)]
        on_chain: PathBuf,
        /// Bucket width in seconds.
        #[arg(long, default_value_t = tvpvar::ingest::DEFAULT_FREQUENCY)]
        freq: i64,
        /// Target columns of the VAR dataset.
        #[arg(long, value_delimiter = ',', required = true)]
        target: Vec<String>,
        /// Extra columns whose lags enter the regressors.
        #[arg(long, value_delimiter = ',')]
        regressors: Vec<String>,
        #[arg(long, default_value_t = 1)]
        lag: usize,
        #[arg(long, value_enum, default_value_t = Policy::ForwardFill)]
        policy: Policy,
        #[arg(long)]
        no_standardize: bool,
        #[arg(long)]
        no_intercept: bool,
        /// Standardised panel CSV.
        #[arg(long)]
        out: PathBuf,
        /// Panel before standardisation.
        #[arg(long)]
        raw_out: Option<PathBuf>,
        /// Data CSV (step, y_*, x_*) ready for `infer`.
        #[arg(long)]
        var_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Kalman,
    Vi,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Policy {
    ForwardFill,
    Drop,
    Error,
}

impl From<Policy> for MissingPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::ForwardFill => MissingPolicy::ForwardFill,
            Policy::Drop => MissingPolicy::Drop,
            Policy::Error => MissingPolicy::Error,
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_report(path: &Path, report: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn synth_cmd(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: SynthConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let ds = generate::<f64>(&cfg)?;
    let mut w = create(out)?;
    write_data_csv(&DataTable::from_synthetic(&ds), &mut w)?;
    w.flush()?;
    write_report(
        &sidecar(out, ".report.json"),
        &json!({ "command": "synth", "config": cfg, "seed": cfg.seed, "rng": RNG_ALGORITHM, "output": out }),
    )
}

/// `infer` options that can live in the JSON config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InferConfig {
    window: usize,
    q_var: f64,
    r_var: f64,
    /// Initial covariance scale for the Kalman filter (`P0 = p0_var * I`).
    p0_var: f64,
    /// Initial latent vector (zero when absent).
    beta0: Option<Vec<f64>>,
    optimizer: LbfgsConfig,
}

impl Default for InferConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            window: 1,
            q_var: synth.state_variance(),
            r_var: synth.obs_variance(),
            p0_var: 1.0,
            beta0: None,
            optimizer: LbfgsConfig::default(),
        }
    }
}

struct InferArgs<'a> {
    method: Method,
    window: Option<usize>,
    data: &'a Path,
    out_dir: &'a Path,
    config: Option<&'a Path>,
    q_var: Option<f64>,
    r_var: Option<f64>,
    forward_net: Option<&'a Path>,
    seed: Option<u64>,
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    if a.method == Method::Kalman && a.window.is_some() {
        bail!(tvpvar::Error::Config("window is a VI-only option; the Kalman filter is sequential".into()));
    }
    if a.method == Method::Kalman && a.forward_net.is_some() {
        bail!(tvpvar::Error::Config("a learned forward model is only supported by the VI engine".into()));
    }
    let mut cfg: InferConfig = read_json(a.config)?;
    if let Some(w) = a.window {
        cfg.window = w;
    }
    if let Some(v) = a.q_var {
        cfg.q_var = v;
    }
    if let Some(v) = a.r_var {
        cfg.r_var = v;
    }
    let table: DataTable<f64> = read_data_csv(open(a.data)?)?;
    let (q, k) = (table.obs_dim(), table.regressor_dim());
    let n = q * k;
    let regressors = table.regressor_series()?;
    let noise = NoiseSpec::isotropic(n, cfg.q_var, q, cfg.r_var)?;
    let beta0 = match &cfg.beta0 {
        Some(b) if b.len() != n => bail!(tvpvar::Error::Config(format!("beta0 needs {n} values, got {}", b.len()))),
        Some(b) => DVector::from_column_slice(b),
        None => DVector::zeros(n),
    };

    let clock = Instant::now();
    let (states, forecasts, mse, windows): (Vec<DVector<f64>>, Vec<(usize, DVector<f64>)>, f64, Option<Vec<WindowStats>>) =
        match a.method {
            Method::Kalman => {
                let init = KalmanState::new(beta0, DMatrix::identity(n, n) * cfg.p0_var)?;
                let res = kalman_filter(&regressors, &table.observations, &ForwardModel::Identity, &noise, Some(init))?;
                let fc = res.one_step_forecasts.into_iter().enumerate().collect();
                (res.trajectory.into_states(), fc, res.mse, None)
            }
            Method::Vi => {
                let mut vc = VarConfig::new(cfg.window, noise);
                vc.optimizer = cfg.optimizer;
                if let Some(p) = a.forward_net {
                    vc.forward = ForwardModel::learned(load_params::<f64>(p)?);
                }
                let res = run_tvp_var_vi(&regressors, &table.observations, &vc, Some(&beta0))?;
                (res.trajectory.into_states(), res.one_step_forecasts, res.mse, Some(res.per_window_stats))
            }
        };
    let wall = clock.elapsed().as_secs_f64();

    fs::create_dir_all(a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut w = create(&a.out_dir.join("beta.csv"))?;
    write_vectors_csv(&table.steps, &states, "beta", &mut w)?;
    w.flush()?;
    let steps: Vec<usize> = forecasts.iter().map(|(i, _)| table.steps[*i]).collect();
    let yhat: Vec<DVector<f64>> = forecasts.iter().map(|(_, f)| f.clone()).collect();
    let observed: Vec<DVector<f64>> = forecasts.iter().map(|(i, _)| table.observations[*i].clone()).collect();
    let mut w = create(&a.out_dir.join("forecasts.csv"))?;
    write_forecasts_csv(&steps, &yhat, &observed, &mut w)?;
    w.flush()?;

    let iterations: Option<Vec<usize>> = windows.as_ref().map(|ws| ws.iter().map(|s| s.iterations).collect());
    write_report(
        &a.out_dir.join("report.json"),
        &json!({
            "command": "infer",
            "method": a.method,
            "data": a.data,
            "seed": a.seed,
            "q": q,
            "K": k,
            "n": n,
            "T": table.len(),
            "config": cfg,
            "forward_net": a.forward_net,
            "mse": mse,
            "wall_time_secs": wall,
            "iterations": iterations,
            "windows": windows,
        }),
    )
}

fn bench_cmd(config: Option<&Path>, out: &Path, parallel: bool, seed: Option<u64>) -> Result<()> {
    let mut cfg: BenchConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.parallel |= parallel;
    let table = run_benchmark(&cfg)?;
    let mut w = create(out)?;
    write_bench_csv(&table, &mut w)?;
    w.flush()?;
    write_report(
        &sidecar(out, ".report.json"),
        &json!({ "command": "bench", "config": cfg, "seed": cfg.seed, "metadata": table.metadata }),
    )
}

fn train_cmd(beta: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: NetConfig = read_json(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (steps, states) = read_trajectory_csv::<f64, _>(open(beta)?)?;
    cfg.input_dim = states[0].len();
    let traj = LatentTrajectory::new(steps[0], states)?;
    let (net, report) = train(&traj, &cfg)?;
    save_params(&net, out)?;
    write_report(
        &sidecar(out, ".report.json"),
        &json!({ "command": "train-net", "beta": beta, "config": cfg, "seed": cfg.seed, "report": report }),
    )
}

fn forecast_cmd(params: &Path, seed_window: &Path, steps: usize, out: &Path, seed: Option<u64>) -> Result<()> {
    let net = load_params::<f64>(params)?;
    let (labels, states) = read_trajectory_csv::<f64, _>(open(seed_window)?)?;
    let w = net.lookback();
    if states.len() < w {
        bail!(tvpvar::Error::Config(format!("seed window needs at least {w} rows, got {}", states.len())));
    }
    let tail = &states[states.len() - w..];
    let d = net.dim();
    if tail[0].len() != d {
        bail!(tvpvar::Error::Shape(format!("seed window has dimension {}, network expects {d}", tail[0].len())));
    }
    let seed_m = DMatrix::from_fn(w, d, |r, c| tail[r][c]);
    let f = net.predict_n_steps(&seed_m, steps)?;
    let last = *labels.last().expect("non-empty");
    let out_steps: Vec<usize> = (1..=steps).map(|i| last + i).collect();
    let rows: Vec<DVector<f64>> = (0..steps).map(|r| f.row(r).transpose()).collect();
    let mut wr = create(out)?;
    write_vectors_csv(&out_steps, &rows, "beta", &mut wr)?;
    wr.flush()?;
    write_report(
        &sidecar(out, ".report.json"),
        &json!({ "command": "forecast", "params": params, "seed_window": seed_window, "steps": steps, "seed": seed }),
    )
}

struct IngestArgs<'a> {
    off_chain: &'a Path,
    on_chain: &'a Path,
    freq: i64,
    target: &'a [String],
    regressors: &'a [String],
    lag: usize,
    policy: Policy,
    standardize: bool,
    intercept: bool,
    out: &'a Path,
    raw_out: Option<&'a Path>,
    var_out: Option<&'a Path>,
    seed: Option<u64>,
}

fn ingest_cmd(a: IngestArgs) -> Result<()> {
    let off = parse_off_chain_csv(a.off_chain)?;
    let on = parse_on_chain_csv(a.on_chain)?;
    let opts = IngestOptions { frequency: a.freq, policy: a.policy.into(), standardize: a.standardize };
    let res = ingest(&off, &on, &opts)?;
    let targets: Vec<&str> = a.target.iter().map(String::as_str).collect();
    let regs: Vec<&str> = a.regressors.iter().map(String::as_str).collect();
    let (y, x) = to_var_dataset::<f64>(&res.panel, &targets, &regs, a.lag, a.intercept)?;

    let mut w = create(a.out)?;
    write_panel_csv(&res.panel, &mut w)?;
    w.flush()?;
    fs::write(sidecar(a.out, ".meta"), panel_metadata(&res.panel, Some(&res.summary)))
        .with_context(|| format!("writing metadata for {}", a.out.display()))?;
    if let Some(p) = a.raw_out {
        let mut w = create(p)?;
        write_panel_csv(&res.raw, &mut w)?;
        w.flush()?;
    }
    if let Some(p) = a.var_out {
        let mut w = create(p)?;
        write_data_csv(&DataTable::from_series(&y, &x)?, &mut w)?;
        w.flush()?;
    }
    write_report(
        &sidecar(a.out, ".report.json"),
        &json!({
            "command": "ingest",
            "off_chain": a.off_chain,
            "on_chain": a.on_chain,
            "options": opts,
            "target": a.target,
            "regressors": a.regressors,
            "lag": a.lag,
            "intercept": a.intercept,
            "seed": a.seed,
            "rows": res.panel.len(),
            "q": y.dim(),
            "K": x.dim(),
            "summary": res.summary,
        }),
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out, seed } => synth_cmd(config.as_deref(), &out, seed),
        Command::Infer { method, window, data, out_dir, config, q_var, r_var, forward_net, seed } => {
            infer_cmd(InferArgs {
                method,
                window,
                data: &data,
                out_dir: &out_dir,
                config: config.as_deref(),
                q_var,
                r_var,
                forward_net: forward_net.as_deref(),
                seed,
            })
        }
        Command::Bench { config, out, parallel, seed } => bench_cmd(config.as_deref(), &out, parallel, seed),
        Command::TrainNet { beta, config, out, seed } => train_cmd(&beta, config.as_deref(), &out, seed),
        Command::Forecast { params, seed_window, steps, out, seed } => {
            forecast_cmd(&params, &seed_window, steps, &out, seed)
        }
        Command::Ingest {
            off_chain,
            on_chain,
            freq,
            target,
            regressors,
            lag,
            policy,
            no_standardize,
            no_intercept,
            out,
            raw_out,
            var_out,
            seed,
        } => ingest_cmd(IngestArgs {
            off_chain: &off_chain,
            on_chain: &on_chain,
            freq,
            target: &target,
            regressors: &regressors,
            lag,
            policy,
            standardize: !no_standardize,
            intercept: !no_intercept,
            out: &out,
            raw_out: raw_out.as_deref(),
            var_out: var_out.as_deref(),
            seed,
        }),
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(core) = e.downcast_ref::<tvpvar::Error>() {
        return core.kind();
    }
    if e.downcast_ref::<serde_json::Error>().is_some() {
        return "config";
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return "io";
    }
    "error"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({ "error": error_kind(&e), "message": format!("{e:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
