//! Pedestrian state estimation with a Kalman-filter front-end feeding a
//! deep-ensemble trajectory forecaster.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`, which is what the CLI and the experiment
//! pipeline use.

pub mod data;
pub mod error;
pub mod geometry;
pub mod kalman;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod sampling;
pub mod scalar;
pub mod uncertainty;
pub mod uq;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type TrackState = geometry::TrackState<f64>;
pub type CovMatrix2 = geometry::CovMatrix2<f64>;
pub type CovMatrix4 = geometry::CovMatrix4<f64>;
pub type Ellipse = geometry::Ellipse<f64>;
pub type Trajectory = geometry::Trajectory<f64>;
pub type KfConfig = kalman::KfConfig<f64>;
pub type KfPosterior = kalman::KfPosterior<f64>;
pub type SequencePair = data::SequencePair<f64>;
pub type NetParams = net::NetParams<f64>;
pub type Ensemble = uq::Ensemble<f64>;
pub type PredictiveSummary = uq::PredictiveSummary<f64>;
pub type Forecast = metrics::Forecast<f64>;
pub type TotalUncertainty = uncertainty::TotalUncertainty<f64>;
