//! Global recurrent-network forecasting for collections of related
//! univariate time series.
//!
//! One model is trained across every series in a collection: weights are
//! shared globally while hidden state is kept per series. The crate covers
//! the whole pipeline — loading and imputation, variance stabilization,
//! periodic seasonal-trend decomposition, moving-window construction,
//! three recurrent units under four architecture/input configurations,
//! three optimizers, surrogate-guided hyperparameter tuning, multi-seed
//! median ensembling, forecast post-processing, and SMAPE/MASE evaluation,
//! plus seasonal-naive and pooled ridge regression baselines.

pub mod arch;
pub mod autodiff;
pub mod baselines;
pub mod cells;
pub mod data;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod preprocess;
pub mod rng;
pub mod smbo;
pub mod stl;
pub mod train;

pub use error::{Error, Result};
