//! Spatio-temporal echocardiography segmentation on a small reverse-mode
//! autodiff core: temporal-fusion attention, Haar frequency fusion,
//! factorized fine-tuning, sparse-label training and evaluation metrics.

pub mod ablation;
pub mod attention;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fact;
pub mod gradcheck_suite;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod phantom;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
