//! Probabilistic spatiotemporal forecasting on dynamic mobility graphs.
//!
//! A panel of related time series is modeled jointly: each day, every node's
//! covariates are diffused over a mobility-derived transition matrix through
//! a learnable edge mask, fed with the previous target into a shared LSTM,
//! and mapped to a Gaussian mixture over the next value. Training maximizes
//! the prediction-range likelihood by backpropagation through time with
//! Adam; forecasting draws ancestral sample trajectories and summarizes them
//! as quantiles.

pub mod data;
pub mod density;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod seeding;
pub mod training;

pub use data::{DataError, TimeSeriesPanel};
pub use density::{GaussianParams, GmmParams, SigmaLink};
pub use graph::{DynamicAdjacency, GraphError};
pub use metrics::{MetricsError, MetricsReport};
pub use model::{ForecastArtifact, Model, ModelConfig, ModelError};
pub use nn::{AdamConfig, NnError, ParamStore};
pub use training::{TrainConfig, TrainError, TrainReport};
