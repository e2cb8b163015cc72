//! Bayesian inference for time-varying-parameter vector autoregressions.
//!
//! Two engines estimate the latent coefficient path `beta_t`: a sequential
//! Kalman filter ([`kalman`]) and a windowed variational engine minimised by
//! L-BFGS ([`varinf`]). [`synth`] generates data with known ground truth,
//! [`net`] learns a surrogate forward model from an inferred trajectory, and
//! [`ingest`] turns exchange and ledger CSV exports into model-ready series.
//!
//! Everything numerical is generic over [`Real`]; the `*F64` aliases below are
//! the concrete types used by the command-line tool.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod forward;
pub mod ingest;
pub mod kalman;
pub mod lbfgs;
pub mod model;
pub mod net;
pub mod noise;
pub mod scalar;
pub mod synth;
pub mod varinf;

pub use error::{Error, Result};
pub use forward::ForwardModel;
pub use model::{
    build_regressors, predict_observation, unvec, vec, LatentTrajectory, ObservationSeries,
    RegressorSeries,
};
pub use noise::{Covariance, NoiseSpec, StateNoise};
pub use scalar::Real;

pub type ObservationSeriesF64 = ObservationSeries<f64>;
pub type RegressorSeriesF64 = RegressorSeries<f64>;
pub type LatentTrajectoryF64 = LatentTrajectory<f64>;
pub type NoiseSpecF64 = NoiseSpec<f64>;
pub type ForwardModelF64 = ForwardModel<f64>;
pub type KalmanStateF64 = kalman::KalmanState<f64>;
pub type VarConfigF64 = varinf::VarConfig<f64>;
pub type TvpVarNetF64 = net::TvpVarNet<f64>;
pub type SyntheticDatasetF64 = synth::SyntheticDataset<f64>;
