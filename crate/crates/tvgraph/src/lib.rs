//! Stimulus-locked time-varying Gaussian graphical models from paired
//! multivariate time series.
//!
//! The pipeline: kernel-smoothed inter-subject covariance estimation,
//! constrained L1 inversion (CLIME) per time point, one-step de-biasing, and
//! Gaussian multiplier bootstrap inference for monotone graph properties via
//! a max-degree test and a dynamic step-down procedure.

pub mod clime;
pub mod data;
pub mod debias;
pub mod error;
pub mod graph;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod seeding;
pub mod simplex;
pub mod stepdown;

pub use clime::{clime_column, clime_from_cov, clime_full, cross_validate_lambda, ClimeConfig};
pub use data::{generate_nuisance, generate_precision_path, sample_dataset, PairedDataset};
pub use debias::{bootstrap_draws, debias, test_statistic, BootstrapResult, EdgeSelector};
pub use error::{Error, Result};
pub use graph::{critical_set, critical_set_oracle, eval_property, EdgeSet, GraphProperty};
pub use kernel::{smoothed_cov_inter, smoothed_cov_ustat, smoothed_cov_within, KernelSpec};
pub use stepdown::{
    calibration_study, roc_study, stepdown_test, test_max_degree, LambdaRule, TestConfig,
};
