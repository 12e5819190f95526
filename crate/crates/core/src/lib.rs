//! Isotropy measurement and regularization for point clouds of neural
//! activations.
//!
//! The crate computes IsoScore* (a shrinkage-stabilized, differentiable
//! isotropy score) together with the older IsoScore, average random cosine
//! similarity and partition-function measures; differentiates IsoScore*
//! exactly; estimates intrinsic dimension with TwoNN; and trains small MLPs
//! with isotropy (I-STAR) or cosine-similarity (CosReg) penalties.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod grad;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod tensor;
pub mod twonn;

pub use error::{Error, ErrorKind, Result};
pub use grad::{finite_diff_grad, grad_isoscore_star, CloudGradient};
pub use metrics::{avg_random_cosine, isoscore, isoscore_star, partition_isotropy, IsoReport, MetricSample};
pub use tensor::{covariance, shrink, sym_eigvals, CovMatrix, Estimator, PointCloud, Spectrum};
pub use twonn::{twonn_id, IdEstimate};
