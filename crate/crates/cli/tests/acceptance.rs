//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::slice;

use anyhow::{ensure, Context, Result};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use tvpvar::bench::{run_benchmark, BenchConfig, Method};
use tvpvar::ingest::{ingest, parse_off_chain_csv, parse_on_chain_csv, write_panel_csv, IngestOptions, MissingPolicy};
use tvpvar::kalman::kalman_filter;
use tvpvar::lbfgs::LbfgsConfig;
use tvpvar::net::{loss_and_gradient, sliding_samples, train, Branches, NetConfig, TvpVarNetParams};
use tvpvar::synth::{generate, SynthConfig};
use tvpvar::varinf::{closed_form_minimizer, minimize_window, run_tvp_var_vi, VarConfig, WindowData};
use tvpvar::{Covariance, Error, ForwardModel, LatentTrajectory, NoiseSpec};

type Check = fn() -> Result<(bool, String)>;

fn normal_vec(rng: &mut ChaCha20Rng, len: usize, sd: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

fn uniform_vec(rng: &mut ChaCha20Rng, len: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(lo..hi))
}

struct Instance {
    xs: Vec<DVector<f64>>,
    ys: Vec<DVector<f64>>,
    beta_b: DVector<f64>,
    noise: NoiseSpec<f64>,
}

fn random_instance(rng: &mut ChaCha20Rng, q: usize, k: usize, window: usize, r_range: (f64, f64)) -> Result<Instance> {
    let n = q * k;
    let xs = (0..window).map(|_| normal_vec(rng, k, 1.0)).collect();
    let ys = (0..window).map(|_| normal_vec(rng, q, 1.0)).collect();
    let beta_b = normal_vec(rng, n, 0.5);
    let noise = NoiseSpec::new(
        Covariance::diagonal(uniform_vec(rng, n, 0.5, 2.0))?,
        Covariance::diagonal(uniform_vec(rng, q, r_range.0, r_range.1))?,
    );
    Ok(Instance { xs, ys, beta_b, noise })
}

fn quadratic_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let q = [1, 2, 5][i % 3];
        let k = [2, 11, 51][(i / 3) % 3];
        let window = 1 + (i / 9) % 5;
        let inst = random_instance(&mut rng, q, k, window, (0.1, 1.0))?;
        let mut cfg = VarConfig::new(window, inst.noise);
        cfg.optimizer = LbfgsConfig { grad_tol: 1e-10, max_iter: 2000, ..LbfgsConfig::default() };
        let w = WindowData::new(0, &inst.xs, &inst.ys)?;
        let exact = closed_form_minimizer(&inst.beta_b, &w, &cfg)?;
        let res = minimize_window(&inst.beta_b, &inst.beta_b, &w, &cfg)?;
        worst = worst.max((&res.x_opt - &exact).norm() / exact.norm());
    }
    Ok((worst <= 1e-6, format!("max relative error {worst:.3e} over 100 instances (tol 1e-6)")))
}

fn kalman_3dvar() -> Result<(bool, String)> {
    let cfg = SynthConfig { t: 200, seed: 7, ..SynthConfig::default() };
    let ds = generate::<f64>(&cfg)?;
    let noise = NoiseSpec::isotropic(cfg.n, cfg.state_variance(), cfg.q, cfg.obs_variance())?;
    let obs = ds.observations.rows();
    let kf = kalman_filter(&ds.regressors, obs, &ForwardModel::Identity, &noise, None)?;
    let mut worst: f64 = 0.0;
    for t in 0..cfg.t {
        let prior = Covariance::dense(kf.predicted_covs[t].clone())?;
        let vc = VarConfig::new(1, NoiseSpec::new(prior, noise.obs.clone()));
        let w = WindowData::new(t, slice::from_ref(ds.regressors.get(t)), slice::from_ref(&obs[t]))?;
        let m = closed_form_minimizer(&kf.predicted_means[t], &w, &vc)?;
        worst = worst.max((m - &kf.trajectory.states()[t]).amax());
    }
    Ok((worst <= 1e-8, format!("max |3D-Var - Kalman posterior| {worst:.3e} over T=200 (tol 1e-8)")))
}

fn forecast_mse_order() -> Result<(bool, String)> {
    let cfg = SynthConfig::default();
    ensure!(cfg.t == 500 && cfg.n == 50, "synthetic defaults changed");
    let ds = generate::<f64>(&cfg)?;
    let noise = NoiseSpec::isotropic(cfg.n, cfg.state_variance(), cfg.q, cfg.obs_variance())?;
    let obs = ds.observations.rows();
    let kalman = kalman_filter(&ds.regressors, obs, &ForwardModel::Identity, &noise, None)?.mse;
    let vi = run_tvp_var_vi(&ds.regressors, obs, &VarConfig::new(1, noise), None)?.mse;
    let band = |m: f64| (1e-4..=1e-2).contains(&m);
    Ok((
        band(kalman) && band(vi),
        format!("q={} n={} T={}: kalman {kalman:.3e}, vi {vi:.3e} (band [1e-4, 1e-2])", cfg.q, cfg.n, cfg.t),
    ))
}

fn scaling_trend() -> Result<(bool, String)> {
    let cfg = BenchConfig {
        dims: vec![(5, 10), (5, 50), (5, 100)],
        windows: vec![1],
        t: 200,
        repetitions: 5,
        ..BenchConfig::default()
    };
    let table = run_benchmark(&cfg)?;
    let time = |method: Method, n: usize| -> Result<f64> {
        let row = table
            .rows
            .iter()
            .find(|r| r.method == method && r.n == n)
            .with_context(|| format!("no {method:?} row for n={n}"))?;
        ensure!(row.error.is_none(), "{method:?} n={n} failed: {:?}", row.error);
        Ok(row.median_seconds)
    };
    let kalman = time(Method::Kalman, 100)? / time(Method::Kalman, 10)?;
    let vi = time(Method::Vi, 100)? / time(Method::Vi, 10)?;
    Ok((kalman > vi, format!("time(n=100)/time(n=10): kalman {kalman:.2}, vi {vi:.2} (need kalman > vi)")))
}

fn optimizer_property() -> Result<(bool, String)> {
    let mut rng = ChaCha20Rng::seed_from_u64(505);
    let mut wins = 0;
    let mut detail = Vec::new();
    for i in 0..20 {
        let (q, k, window) = (2, 20 + i, 3);
        let inst = random_instance(&mut rng, q, k, window, (0.05, 0.2))?;
        let w = WindowData::new(0, &inst.xs, &inst.ys)?;
        let mut cfg = VarConfig::new(window, inst.noise);
        cfg.optimizer = LbfgsConfig { grad_tol: 1e-6, max_iter: 20_000, ..LbfgsConfig::default() };
        let lb = minimize_window(&inst.beta_b, &inst.beta_b, &w, &cfg)?;
        cfg.optimizer = LbfgsConfig { grad_tol: 1e-6, max_iter: 20_000, ..LbfgsConfig::steepest_descent() };
        let sd = minimize_window(&inst.beta_b, &inst.beta_b, &w, &cfg)?;
        if lb.converged && (!sd.converged || lb.iterations < sd.iterations) {
            wins += 1;
        }
        detail.push(format!("{}/{}", lb.iterations, sd.iterations));
    }
    Ok((wins >= 18, format!("L-BFGS fewer iterations on {wins}/20 (need >= 18); lbfgs/sd: {}", detail.join(" "))))
}

fn net_gradient() -> Result<(bool, String)> {
    let (d, hidden, w, p) = (1, 3, 4, 2);
    let h = 1e-5;
    let mut rng = ChaCha20Rng::seed_from_u64(606);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let mut params = TvpVarNetParams::<f64>::zeros(d, hidden, p);
        let n = params.num_params();
        let flat: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        params.set_flat(&flat)?;
        params.gate = 1.0;
        let rows: Vec<DVector<f64>> = (0..w + 8).map(|_| normal_vec(&mut rng, d, 1.0)).collect();
        let samples = sliding_samples(&rows, w);
        let (_, grad) = loss_and_gradient(&params, &samples, false);
        let analytic = grad.to_flat();
        let base = params.to_flat();
        let loss_at = |v: &[f64]| -> Result<f64> {
            let mut pp = params.clone();
            pp.set_flat(v)?;
            Ok(loss_and_gradient(&pp, &samples, false).0)
        };
        // the trailing entry is the AR gate, fixed when ungated
        for j in 0..base.len() - 1 {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[j] += h;
            minus[j] -= h;
            let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
            let err = (analytic[j] - fd).abs() / analytic[j].abs().max(fd.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok((worst < 1e-4, format!("max relative error {worst:.3e} over 10 draws (tol 1e-4)")))
}

fn mean_sq(pairs: impl Iterator<Item = (DVector<f64>, DVector<f64>)>) -> f64 {
    let (mut s, mut c) = (0.0, 0usize);
    for (a, b) in pairs {
        s += (a - &b).norm_squared();
        c += b.len();
    }
    s / c as f64
}

fn net_forecasting() -> Result<(bool, String)> {
    let mut rng = ChaCha20Rng::seed_from_u64(707);
    let (len, cut) = (300, 240);
    let drift = DVector::from_vec(vec![0.05, -0.03]);
    let mut beta = DVector::zeros(2);
    let mut states = Vec::with_capacity(len);
    for _ in 0..len {
        beta += &drift + normal_vec(&mut rng, 2, 0.02);
        states.push(beta.clone());
    }
    let train_part = LatentTrajectory::new(0, states[..cut].to_vec())?;
    let cfg = NetConfig {
        input_dim: 2,
        hidden: 8,
        lookback: 5,
        ar_lags: 3,
        epochs: 300,
        batch_size: 8,
        seed: 3,
        ..NetConfig::default()
    };
    let test_mse = |branches: Branches| -> Result<f64> {
        let (net, _) = train(&train_part, &NetConfig { branches, ..cfg.clone() })?;
        let preds = net.one_step_predictions(&states)?;
        let offset = cfg.lookback;
        Ok(mean_sq((cut..len).map(|t| (preds[t - offset].clone(), states[t].clone()))))
    };
    let both = test_mse(Branches::Both)?;
    let lstm = test_mse(Branches::LstmOnly)?;
    let persistence = mean_sq((cut..len).map(|t| (states[t - 1].clone(), states[t].clone())));
    Ok((
        both < persistence && both <= lstm,
        format!("test MSE: lstm+ar {both:.3e}, lstm only {lstm:.3e}, persistence {persistence:.3e}"),
    ))
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/ingest")
}

fn ingestion_golden() -> Result<(bool, String)> {
    let dir = fixture_dir();
    let off = parse_off_chain_csv(dir.join("off_chain.csv"))?;
    let on = parse_on_chain_csv(dir.join("on_chain.csv"))?;
    ensure!(off.len() == 50 && on.len() == 40, "fixture sizes changed");
    let mut failures = Vec::new();
    let mut worst_ret: f64 = 0.0;
    for (policy, name) in [(MissingPolicy::ForwardFill, "forward_fill"), (MissingPolicy::Drop, "drop")] {
        let out = ingest(&off, &on, &IngestOptions { policy, ..IngestOptions::default() })?;
        for (panel, suffix) in [(&out.raw, "_raw"), (&out.panel, "")] {
            let mut buf = Vec::new();
            write_panel_csv(panel, &mut buf)?;
            let expected = fs::read_to_string(dir.join(format!("expected_{name}{suffix}.csv")))?;
            if String::from_utf8(buf)? != expected {
                failures.push(format!("{name}{suffix}"));
            }
        }
        let close = out.raw.column("close")?;
        let returns = out.raw.column("returns")?;
        let joined = tvpvar::ingest::align_and_join(&off, &on, 3600, policy)?.0;
        let all_close = joined.column("close")?;
        for (i, r) in returns.iter().enumerate() {
            ensure!(all_close[i + 1] == close[i], "close column misaligned");
            worst_ret = worst_ret.max((r - (all_close[i + 1] / all_close[i]).ln()).abs());
        }
    }
    let expected_err = fs::read_to_string(dir.join("expected_error.txt"))?;
    let (bucket, source) = expected_err.trim().split_once(',').context("bad expected_error.txt")?;
    let bucket: i64 = bucket.parse()?;
    match ingest(&off, &on, &IngestOptions { policy: MissingPolicy::Error, ..IngestOptions::default() }) {
        Err(Error::MissingBucket { bucket_start, source_name }) if bucket_start == bucket && source_name == source => {}
        other => failures.push(format!("error policy gave {:?}", other.map(|o| o.panel.len()))),
    }
    let ok = failures.is_empty() && worst_ret <= 1e-12;
    let detail = if failures.is_empty() {
        format!("all policies match golden files; max log-return error {worst_ret:.1e} (tol 1e-12)")
    } else {
        format!("mismatch: {}; max log-return error {worst_ret:.1e}", failures.join(", "))
    };
    Ok((ok, detail))
}

fn run_cli(args: &[&str]) -> Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_tvpvar")).args(args).output()?;
    ensure!(out.status.success(), "tvpvar {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn determinism() -> Result<(bool, String)> {
    let tmp = tempfile::tempdir()?;
    let p = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();
    fs::write(p("synth.json"), r#"{"q": 2, "n": 6, "T": 150}"#)?;
    fs::write(p("net.json"), r#"{"hidden": 4, "lookback": 5, "ar_lags": 2, "epochs": 15}"#)?;
    let mut outputs: Vec<Vec<Vec<u8>>> = Vec::new();
    for run in 0..2 {
        let d = |name: &str| p(&format!("{run}_{name}"));
        run_cli(&["synth", "--config", &p("synth.json"), "--out", &d("data.csv"), "--seed", "11"])?;
        run_cli(&["infer", "--method", "kalman", "--data", &d("data.csv"), "--out-dir", &d("kalman"), "--seed", "11"])?;
        run_cli(&["infer", "--method", "vi", "--window", "2", "--data", &d("data.csv"), "--out-dir", &d("vi")])?;
        let beta = format!("{}/beta.csv", d("kalman"));
        run_cli(&["train-net", "--beta", &beta, "--config", &p("net.json"), "--out", &d("net.txt"), "--seed", "5"])?;
        let files = [
            d("data.csv"),
            format!("{}/beta.csv", d("kalman")),
            format!("{}/forecasts.csv", d("kalman")),
            format!("{}/beta.csv", d("vi")),
            format!("{}/forecasts.csv", d("vi")),
            d("net.txt"),
        ];
        outputs.push(files.iter().map(fs::read).collect::<std::io::Result<_>>()?);
    }
    let same = outputs[0] == outputs[1];
    Ok((same, format!("synth, infer (kalman, vi) and train-net outputs identical across runs: {same}")))
}

fn main() {
    let checks: [(&str, Check); 9] = [
        ("quadratic_oracle_equivalence", quadratic_oracle),
        ("kalman_3dvar_equivalence", kalman_3dvar),
        ("forecast_mse_order", forecast_mse_order),
        ("scaling_trend", scaling_trend),
        ("lbfgs_beats_steepest_descent", optimizer_property),
        ("net_gradient_correctness", net_gradient),
        ("net_forecasting", net_forecasting),
        ("ingestion_golden_files", ingestion_golden),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check));
        let (ok, detail) = match outcome {
            Ok(Ok(v)) => v,
            Ok(Err(e)) => (false, format!("error: {e:#}")),
            Err(_) => (false, "panicked".to_string()),
        };
        failed += usize::from(!ok);
        println!("{} [{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
