//! Contraction-mapping position priors for few-shot segmentation.
//!
//! From backbone feature maps of a support image, its mask, and a query
//! image, the crate builds an initial cosine-similarity prior, refines it by
//! a certified fixed-point iteration over a sparse top-k similarity graph of
//! the query, and turns the result into binary masks, fused K-shot
//! predictions, losses and IoU metrics.
//!
//! Numeric routines are generic over [`Scalar`] (`f32` or `f64`); the
//! `*F32` aliases below name the types used by the file formats and CLI.

pub mod app;
pub mod bench;
pub mod config;
pub mod error;
pub mod graph;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod prior_init;
pub mod scalar;
pub mod solver;
pub mod synth;
pub mod tensor;

pub use config::{Similarity, SolverConfig};
pub use error::{Error, Result};
pub use graph::{build_transfer, dense_transfer_oracle, spmv, DenseTransfer, Propagate, TransferMatrix};
pub use metrics::{binarize, evaluate_episodes, fb_iou, iou, kshot_fuse, make_dual_prior, DualPrior, EvalReport};
pub use prior_init::{cosine_prior, initial_prior, masked_average_pool, minmax_normalize, Prototype};
pub use scalar::Scalar;
pub use solver::{iterate_once, normalize_g, solve_fixed_point, FixedPrior, SolverTrace};
pub use tensor::{BinaryMask, FeatureMap, Prior, Tensor};

pub type TensorF32 = Tensor<f32>;
pub type TensorF64 = Tensor<f64>;
pub type FeatureMapF32 = FeatureMap<f32>;
pub type FeatureMapF64 = FeatureMap<f64>;
pub type PriorF32 = Prior<f32>;
pub type PriorF64 = Prior<f64>;
pub type TransferMatrixF32 = TransferMatrix<f32>;
pub type TransferMatrixF64 = TransferMatrix<f64>;
pub type PrototypeF32 = Prototype<f32>;
pub type PrototypeF64 = Prototype<f64>;
pub type FixedPriorF32 = FixedPrior<f32>;
pub type FixedPriorF64 = FixedPrior<f64>;
