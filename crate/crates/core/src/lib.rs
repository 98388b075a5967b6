//! Deep analytic networks (DAN) and their kernel counterpart (K-DAN):
//! layer-wise stacks of closed-form ridge and kernel ridge regressions,
//! trained without backpropagation.
//!
//! Each layer sees the raw input concatenated with the ReLU-ed predictions
//! of every earlier layer, so a layer's input width is `d + N_c(ℓ-1)`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dan;
pub mod data;
pub mod error;
pub mod kdan;
pub mod linalg;
pub mod matrix;
pub mod regression;
pub mod serial;
pub mod theory;

pub use dan::{dan_classify, dan_fit, dan_forward, power_regularize, DanConfig, DanModel, FtClassifier, LayerReport};
pub use data::{Dataset, Standardizer};
pub use error::{Error, Result};
pub use kdan::{kdan_fit, kdan_forward, KdanConfig, KdanModel};
pub use matrix::Matrix;
pub use regression::{classify, encode_one_hot, krr_fit, krr_predict, ridge_fit, ridge_predict, KrrModel, OneHotTargets, RidgeModel};
pub use serial::{AnyModel, ModelFile};
