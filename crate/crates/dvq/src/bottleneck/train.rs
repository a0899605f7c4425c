//! Training loop for the quantized autoencoder.
//!
//! The protocol mirrors the static experiments: the first
//! [`TRAIN_FRACTION`](crate::static_lab::TRAIN_FRACTION) of the dataset is
//! the train split, the rest is the test split, and minibatches are drawn
//! with replacement using a stateless per-step seed, so a run is a pure
//! function of its configuration.
//!
//! Seed layout (all children of `cfg.seed` via
//! [`derive_seed`](crate::seed::derive_seed)):
//!
//! ```text
//! derive(seed, 0)              encoder init
//! derive(seed, 1)              decoder init
//! derive(derive(seed, 2), i)   codebook i init
//! derive(derive(seed, 3), s)   minibatch at step s
//! ```

use crate::bottleneck::mlp::Mlp;
use crate::bottleneck::model::{
    backward_and_step, forward_image, BottleneckQuantizer, BottleneckState,
    EncoderDecoderParams, LossBreakdown, StepOptions,
};
use crate::bottleneck::optim::{OptimizerKind, OptimizerState};
use crate::codebook::{init_codebook, Codebook};
use crate::depthwise::{CodebookBank, FeatureSplitSpec, SpatialPartition};
use crate::error::{Error, Result};
use crate::image::ImageDataset;
use crate::matrix::Matrix;
use crate::metrics::{
    bits_per_dim, codebook_usage, nll_discretized_gaussian, MetricsRecord, BITS_SIGMA,
    METRICS_SCHEMA,
};
use crate::seed::{derive_seed, rng_from};
use crate::static_lab::TRAIN_FRACTION;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Which quantizer sits in the autoencoder bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AeQuantizer {
    /// One codebook over the full latent depth.
    Vq,
    /// `l` codebooks over contiguous feature slices.
    Dvq,
    /// `l` codebooks over contiguous bands of grid rows.
    Svq,
}

fn default_l() -> usize {
    1
}
fn default_hidden() -> Vec<usize> {
    vec![64]
}
fn default_beta() -> f64 {
    0.25
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    32
}
fn default_record_interval() -> usize {
    50
}
fn default_true() -> bool {
    true
}

/// Configuration for one autoencoder training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeTrainConfig {
    pub quantizer: AeQuantizer,
    pub k: usize,
    /// Number of codebooks (feature slices for dvq, row bands for svq);
    /// ignored for plain vq.
    #[serde(default = "default_l")]
    pub l: usize,
    pub latent_d: usize,
    /// Square patch edge; each patch becomes one latent position.
    pub patch: usize,
    /// Hidden layer widths of the encoder; the decoder mirrors them.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    pub seed: u64,
    #[serde(default = "default_record_interval")]
    pub record_interval: usize,
    /// Compute per-sample gradients on the rayon pool (bit-identical to
    /// the sequential path either way).
    #[serde(default = "default_true")]
    pub data_parallel: bool,
}

impl AeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if self.l == 0 {
            return Err(Error::invalid("l must be >= 1"));
        }
        if self.latent_d == 0 {
            return Err(Error::invalid("latent_d must be >= 1"));
        }
        if self.patch == 0 {
            return Err(Error::invalid("patch must be >= 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be >= 1"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("lr must be finite and > 0, got {}", self.lr)));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::invalid(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if self.record_interval == 0 {
            return Err(Error::invalid("record_interval must be >= 1"));
        }
        Ok(())
    }
}

/// Build the initial model for a dataset with the given image shape.
pub fn init_bottleneck(cfg: &AeTrainConfig, ds: &ImageDataset) -> Result<BottleneckState> {
    cfg.validate()?;
    let image = ds.shape;
    let patch_dim = cfg.patch * cfg.patch * image.c;

    let mut enc_dims = vec![patch_dim];
    enc_dims.extend_from_slice(&cfg.hidden);
    enc_dims.push(cfg.latent_d);
    let mut dec_dims = vec![cfg.latent_d];
    dec_dims.extend(cfg.hidden.iter().rev());
    dec_dims.push(patch_dim);

    let mut enc_rng = rng_from(derive_seed(cfg.seed, 0));
    let mut dec_rng = rng_from(derive_seed(cfg.seed, 1));
    let params = EncoderDecoderParams {
        image,
        patch: cfg.patch,
        latent_d: cfg.latent_d,
        encoder: Mlp::new(&enc_dims, &mut enc_rng)?,
        decoder: Mlp::new(&dec_dims, &mut dec_rng)?,
    };
    params.validate()?;

    let cb_base = derive_seed(cfg.seed, 2);
    let quantizer = match cfg.quantizer {
        AeQuantizer::Vq => {
            let cb = init_codebook(cfg.k, cfg.latent_d, derive_seed(cb_base, 0))?;
            BottleneckQuantizer::Depthwise(CodebookBank::new(
                vec![cb],
                FeatureSplitSpec::equal(cfg.latent_d, 1)?,
            )?)
        }
        AeQuantizer::Dvq => {
            let split = FeatureSplitSpec::equal(cfg.latent_d, cfg.l)?;
            let codebooks: Result<Vec<Codebook>> = (0..cfg.l)
                .map(|i| init_codebook(cfg.k, split.size(i), derive_seed(cb_base, i as u64)))
                .collect();
            BottleneckQuantizer::Depthwise(CodebookBank::new(codebooks?, split)?)
        }
        AeQuantizer::Svq => {
            let partition = SpatialPartition::row_bands(params.grid_w(), params.grid_h(), cfg.l)?;
            let codebooks: Result<Vec<Codebook>> = (0..cfg.l)
                .map(|i| init_codebook(cfg.k, cfg.latent_d, derive_seed(cb_base, i as u64)))
                .collect();
            BottleneckQuantizer::Spatial {
                codebooks: codebooks?,
                partition,
            }
        }
    };

    let opt = OptimizerState::new(cfg.optimizer, &BottleneckState::block_sizes(&params, &quantizer));
    Ok(BottleneckState {
        params,
        quantizer,
        beta: cfg.beta,
        opt,
        step: 0,
    })
}

/// Receiver for metrics emitted during training.
pub trait TrainSink {
    fn on_metrics(&mut self, record: &MetricsRecord, state: &BottleneckState) -> Result<()>;
}

/// Discards everything.
pub struct NullSink;

impl TrainSink for NullSink {
    fn on_metrics(&mut self, _record: &MetricsRecord, _state: &BottleneckState) -> Result<()> {
        Ok(())
    }
}

/// Keeps every record in memory.
#[derive(Default)]
pub struct CollectSink {
    pub records: Vec<MetricsRecord>,
}

impl TrainSink for CollectSink {
    fn on_metrics(&mut self, record: &MetricsRecord, _state: &BottleneckState) -> Result<()> {
        self.records.push(record.clone());
        Ok(())
    }
}

/// Loss and bits per dimension of a model on a fixed set of images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub loss: LossBreakdown,
    pub bits_per_dim: f64,
}

/// Evaluate without updating: loss breakdown plus the discretized
/// log-likelihood of the reconstructions in bits per dimension.
pub fn evaluate(state: &BottleneckState, images: &Matrix) -> Result<EvalSummary> {
    if images.rows() == 0 {
        return Err(Error::EmptyInput("evaluate needs at least one image"));
    }
    let n = images.rows() as f64;
    let n_pix = state.params.image.num_pixels();
    let mut recon_sq = 0.0;
    let mut dist = 0.0;
    let mut nll = 0.0;
    for row in images.iter_rows() {
        let fwd = forward_image(row, state)?;
        for (a, b) in row.iter().zip(&fwd.x_hat) {
            let d = a - b;
            recon_sq += d * d;
        }
        dist += fwd.quantization;
        nll += nll_discretized_gaussian(row, &fwd.x_hat, BITS_SIGMA)?;
    }
    let reconstruction = recon_sq / (n * n_pix as f64);
    let d_mean = dist / n;
    let loss = LossBreakdown {
        reconstruction,
        commitment: d_mean,
        vq: d_mean,
        beta: state.beta,
        total: reconstruction + d_mean + state.beta * d_mean,
    };
    Ok(EvalSummary {
        loss,
        bits_per_dim: bits_per_dim(nll, images.rows() * n_pix)?,
    })
}

/// Everything a finished run hands back. Per-step metrics flow through the
/// sink as they happen.
#[derive(Debug, Clone)]
pub struct AeTrainReport {
    pub state: BottleneckState,
    pub final_train: EvalSummary,
    pub final_test: EvalSummary,
}

fn split_images(ds: &ImageDataset) -> Result<(Matrix, Matrix)> {
    let n_train = ((ds.len() as f64) * TRAIN_FRACTION).floor() as usize;
    if n_train == 0 || n_train == ds.len() {
        return Err(Error::invalid(format!(
            "dataset with {} images cannot be split {}/{}",
            ds.len(),
            TRAIN_FRACTION,
            1.0 - TRAIN_FRACTION
        )));
    }
    ds.images.split_rows(n_train)
}

fn sample_batch(train: &Matrix, batch: usize, seed: u64, step: usize) -> Result<Matrix> {
    let mut rng = rng_from(derive_seed(seed, step as u64));
    let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..train.rows())).collect();
    train.select_rows(&idx)
}

fn metrics_record(
    step: usize,
    breakdown: &LossBreakdown,
    state: &BottleneckState,
    indices_per_codebook: &[Vec<usize>],
    nll_nats: f64,
    n_dims: usize,
) -> Result<MetricsRecord> {
    let mut usage = Vec::with_capacity(indices_per_codebook.len());
    let mut perplexity = Vec::with_capacity(indices_per_codebook.len());
    for (ci, indices) in indices_per_codebook.iter().enumerate() {
        let summary = codebook_usage(indices, state.quantizer.codebooks()[ci].k())?;
        usage.push(summary.counts);
        perplexity.push(summary.perplexity);
    }
    Ok(MetricsRecord {
        schema: METRICS_SCHEMA.to_string(),
        step: step as u64,
        reconstruction: breakdown.reconstruction,
        commitment: breakdown.commitment,
        vq: breakdown.vq,
        total: breakdown.total,
        beta: breakdown.beta,
        bits_per_dim: bits_per_dim(nll_nats, n_dims)?,
        usage,
        perplexity,
    })
}

/// Train an autoencoder on `ds` from scratch. Metrics are recorded every
/// `record_interval` steps and at the last step; the final report
/// evaluates both splits with the trained model.
pub fn train_autoencoder(
    ds: &ImageDataset,
    cfg: &AeTrainConfig,
    sink: &mut dyn TrainSink,
) -> Result<AeTrainReport> {
    let (train, test) = split_images(ds)?;
    let mut state = init_bottleneck(cfg, ds)?;
    let batch_seed = derive_seed(cfg.seed, 3);

    for step in 0..cfg.steps {
        let batch = sample_batch(&train, cfg.batch, batch_seed, step)?;
        let record = step % cfg.record_interval == 0 || step + 1 == cfg.steps;
        let opts = StepOptions {
            data_parallel: cfg.data_parallel,
            diagnostics: record,
        };
        let report = backward_and_step(&mut state, &batch, cfg.lr, &opts)?;
        if record {
            let d = report
                .diagnostics
                .expect("diagnostics were requested for recorded steps");
            let rec = metrics_record(
                step,
                &report.breakdown,
                &state,
                &d.indices_per_codebook,
                d.nll_nats,
                d.n_dims,
            )?;
            sink.on_metrics(&rec, &state)?;
        }
    }

    let final_train = evaluate(&state, &train)?;
    let final_test = evaluate(&state, &test)?;
    Ok(AeTrainReport {
        state,
        final_train,
        final_test,
    })
}
