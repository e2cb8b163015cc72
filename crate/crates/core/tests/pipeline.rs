use nalgebra::{DMatrix, DVector};

use tvpvar::dataset::{read_data_csv, read_trajectory_csv, write_data_csv, write_trajectory_csv, DataTable};
use tvpvar::ingest::{ingest, read_off_chain, read_on_chain, to_var_dataset, IngestOptions};
use tvpvar::kalman::{kalman_filter, KalmanState};
use tvpvar::net::{train, NetConfig};
use tvpvar::synth::{generate, SynthConfig};
use tvpvar::varinf::{run_tvp_var_vi, VarConfig};
use tvpvar::{ForwardModel, NoiseSpec, SyntheticDatasetF64};

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/ingest");

fn small(seed: u64) -> (SynthConfig, SyntheticDatasetF64) {
    let cfg = SynthConfig { q: 2, n: 6, t: 120, seed, ..SynthConfig::default() };
    let ds = generate::<f64>(&cfg).unwrap();
    (cfg, ds)
}

#[test]
fn data_csv_round_trips_bit_exactly() {
    let (_, ds) = small(3);
    let table = DataTable::from_synthetic(&ds);
    let mut buf = Vec::new();
    write_data_csv(&table, &mut buf).unwrap();
    let back: DataTable<f64> = read_data_csv(buf.as_slice()).unwrap();
    assert_eq!(back, table);
}

#[test]
fn trajectory_csv_round_trips() {
    let (_, ds) = small(4);
    let mut buf = Vec::new();
    write_trajectory_csv(&ds.gamma_true, &mut buf).unwrap();
    let (steps, states) = read_trajectory_csv::<f64, _>(buf.as_slice()).unwrap();
    assert_eq!(steps, (0..120).collect::<Vec<_>>());
    assert_eq!(states, ds.gamma_true.states());
}

#[test]
fn engines_track_the_true_path() {
    let (cfg, ds) = small(5);
    let noise = NoiseSpec::isotropic(cfg.n, cfg.state_variance(), cfg.q, cfg.obs_variance()).unwrap();
    let obs = ds.observations.rows();
    let kf = kalman_filter(&ds.regressors, obs, &ForwardModel::Identity, &noise, None).unwrap();
    let vi = run_tvp_var_vi(&ds.regressors, obs, &VarConfig::new(1, noise), None).unwrap();
    let err = |states: &[DVector<f64>]| {
        states[60..].iter().zip(&ds.gamma_true.states()[60..]).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / 60.0
    };
    let zero = ds.gamma_true.states()[60..].iter().map(|g| g.norm_squared()).sum::<f64>() / 60.0;
    assert!(err(kf.trajectory.states()) < 0.2 * zero);
    assert!(err(vi.trajectory.states()) < 0.2 * zero);
    // the forecasts cannot beat the observation noise by much
    assert!(kf.mse > 0.5 * cfg.obs_variance());
}

#[test]
fn f32_pipeline_runs() {
    let cfg = SynthConfig { q: 2, n: 4, t: 80, seed: 2, ..SynthConfig::default() };
    let ds = generate::<f32>(&cfg).unwrap();
    let noise = NoiseSpec::isotropic(cfg.n, cfg.state_variance() as f32, cfg.q, cfg.obs_variance() as f32).unwrap();
    let obs = ds.observations.rows();
    let kf = kalman_filter(&ds.regressors, obs, &ForwardModel::Identity, &noise, None).unwrap();
    let vi = run_tvp_var_vi(&ds.regressors, obs, &VarConfig::new(2, noise), None).unwrap();
    assert!(kf.mse.is_finite() && kf.mse < 1.0);
    assert!(vi.mse.is_finite() && vi.mse < 1.0);
}

#[test]
fn linear_forward_model_in_both_engines() {
    let (cfg, ds) = small(6);
    let noise = NoiseSpec::isotropic(cfg.n, cfg.state_variance(), cfg.q, cfg.obs_variance()).unwrap();
    let f = ForwardModel::linear(DMatrix::identity(cfg.n, cfg.n) * 0.999).unwrap();
    let obs = ds.observations.rows();
    let init = KalmanState::new(DVector::zeros(cfg.n), DMatrix::identity(cfg.n, cfg.n)).unwrap();
    let kf = kalman_filter(&ds.regressors, obs, &f, &noise, Some(init)).unwrap();
    let mut vc = VarConfig::new(3, noise);
    vc.forward = f;
    let vi = run_tvp_var_vi(&ds.regressors, obs, &vc, None).unwrap();
    assert!(kf.mse < 0.05 && vi.mse < 0.05, "kalman {} vi {}", kf.mse, vi.mse);
}

#[test]
fn learned_forward_model_drives_vi() {
    let (cfg, ds) = small(7);
    let net_cfg = NetConfig { input_dim: cfg.n, hidden: 4, lookback: 3, ar_lags: 2, epochs: 5, ..NetConfig::default() };
    let (net, _) = train(&ds.gamma_true, &net_cfg).unwrap();
    let noise = NoiseSpec::isotropic(cfg.n, cfg.state_variance(), cfg.q, cfg.obs_variance()).unwrap();
    let mut vc = VarConfig::new(2, noise);
    vc.forward = ForwardModel::learned(net);
    let vi = run_tvp_var_vi(&ds.regressors, ds.observations.rows(), &vc, None).unwrap();
    assert_eq!(vi.trajectory.len(), cfg.t);
    assert!(vi.mse.is_finite());
    // Kalman needs a linear model
    let err = kalman_filter(&ds.regressors, ds.observations.rows(), &vc.forward, &vc.noise, None).unwrap_err();
    assert_eq!(err.kind(), "config");
}

#[test]
fn ingested_panel_feeds_both_directions() {
    let off = read_off_chain(std::fs::File::open(format!("{FIXTURES}/off_chain.csv")).unwrap()).unwrap();
    let on = read_on_chain(std::fs::File::open(format!("{FIXTURES}/on_chain.csv")).unwrap()).unwrap();
    let out = ingest(&off, &on, &IngestOptions::default()).unwrap();
    let (y1, x1) = to_var_dataset::<f64>(&out.panel, &["returns"], &["amount_in"], 2, true).unwrap();
    let (y2, x2) = to_var_dataset::<f64>(&out.panel, &["amount_in"], &["returns"], 2, true).unwrap();
    assert_eq!((y1.dim(), x1.dim()), (y2.dim(), x2.dim()));
    assert_eq!(x1.dim(), 2 * 2 + 1);

    let table = DataTable::from_series(&y1, &x1).unwrap();
    let q = table.obs_dim();
    let n = q * table.regressor_dim();
    let noise = NoiseSpec::isotropic(n, 1e-3, q, 0.5).unwrap();
    let res = kalman_filter(&table.regressor_series().unwrap(), &table.observations, &ForwardModel::Identity, &noise, None)
        .unwrap();
    assert_eq!(res.trajectory.len(), table.len());
    assert!(res.mse.is_finite());
}
