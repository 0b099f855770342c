//! Gaussian input-uncertainty propagation through feedforward ReLU networks
//! using the prediction step of an extended Kalman filter, with optional
//! per-layer process noise estimated from calibration data and a Monte Carlo
//! reference for validation.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_io;
pub mod ekf;
pub mod error;
pub mod linalg;
pub mod mc;
pub mod network;
pub mod noise;
pub mod postprocess;
pub mod trainer;

pub use data_io::{read_idx, read_vectors_csv, LabeledDataset, Report};
pub use ekf::{jacobian, predict_cov, propagate, BeliefState, Propagation, PropagationMode};
pub use error::{Error, Result};
pub use mc::{compare_stats, mc_propagate, sample_inputs, ComparisonReport, SampleStats};
pub use network::{load_model, relu, save_model, ActivationTrace, LayerParams, Network};
pub use noise::{estimate_process_noise, load_noise, save_noise, ProcessNoiseSet};
pub use postprocess::{make_error_bars, rmse_by_label, truncated_variance, ErrorBarSet};
pub use trainer::{evaluate_accuracy, train, TrainConfig};
