//! Gaussian hidden Markov models over flattened S-matrix time series.

mod dwell;
mod model;
mod series;
mod train;

pub use dwell::{dwell_stats, run_lengths, DwellStats, StateDwell, MIN_BIN_COUNT, MIN_DWELLS};
pub use model::{covariance_floor, floor_covariance, synthetic_model, Gaussian, HmmModel, STOCHASTIC_TOL};
pub use series::{smatrix_columns, TimeSeries, DEFAULT_DT, SMATRIX_DIM};
pub use train::{
    baum_welch, kmeans, kmeans_init, label_agreement, log_likelihood, random_init, train, viterbi, BaumWelchOptions,
    HmmOptions, Training, MONOTONE_TOL,
};
