//! Depthwise vector quantization laboratory.
//!
//! The crate has three layers:
//!
//! * **Quantizers** ([`codebook`], [`depthwise`]): single-codebook VQ,
//!   depthwise VQ (feature axis split across several codebooks), and the
//!   spatially-split baseline, all with exact tie-breaking and
//!   worker-count-independent arithmetic.
//! * **Static experiments** ([`blobs`], [`static_lab`]): Gaussian-blob data
//!   with a fixed prior, trained codebooks vs. random baselines, Monte-Carlo
//!   repetition and K-vs-D sweeps.
//! * **Learned prior** ([`bottleneck`], [`shapes`]): a small autoencoder with
//!   a quantized bottleneck trained by straight-through gradients, plus the
//!   synthetic shape images it trains on.
//!
//! [`metrics`] computes bits-per-dim and codebook usage and owns the CSV/JSONL
//! result schemas; [`io`] and [`cifar`] read and write the binary formats
//! documented in `docs/FORMATS.md`.
//!
//! With the default `parallel` feature, batch quantization and experiment
//! fan-out run on rayon. Every parallel entry point has a `_seq` twin and is
//! required (and tested) to produce bit-identical output, because all
//! floating-point reductions happen in a fixed order regardless of worker
//! count.

pub mod blobs;
pub mod bottleneck;
pub mod cifar;
pub mod codebook;
pub mod depthwise;
pub mod error;
pub mod grid;
pub mod image;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod seed;
pub mod shapes;
pub mod static_lab;

pub use codebook::{
    codebook_gradient, init_codebook, nearest_code, quantize_batch, quantize_batch_seq,
    sgd_step, squared_euclidean, vq_objective, Codebook, CodebookGradient, QuantizationResult,
};
pub use depthwise::{
    concat_features, count_distinct_outcomes, dvq_partial_losses, dvq_quantize,
    dvq_quantize_seq, joint_multi_codebook_quantize, split_features, svq_quantize, CodebookBank,
    DepthwiseResult, FeatureSplitSpec, QuantizerSetup, SpatialPartition,
};
pub use error::{Error, Result};
pub use grid::LatentGrid;
pub use matrix::Matrix;
pub use seed::{derive_seed, rng_from};
