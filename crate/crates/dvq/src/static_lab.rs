//! Codebook training on static (non-learned) blob priors.
//!
//! The protocol is fixed so that every model comparison is paired: a base
//! seed spawns one child seed per repetition, each repetition derives a data
//! seed and a model seed, and two models run with the same base seed see the
//! exact same datasets. The first 80% of each dataset trains, the rest is
//! the held-out evaluation split, and minibatches are drawn with
//! replacement from the training split using a per-step derived seed (which
//! also makes resuming a run trivially exact).
//!
//! Models:
//! * `vq` / `vq-plus`: one full-depth codebook (`vq-plus` is bookkeeping for
//!   "plain VQ with a larger K" in comparison tables).
//! * `dvq`: the feature axis is cut into `l` equal slices, one codebook per
//!   slice.
//! * `svq`: each minibatch is cut into `l` contiguous sample bands, one
//!   full-depth codebook per band; with `l = 1` this is exactly `vq`.
//! * `random`: the freshly initialized codebook evaluated with no training.
//!
//! All objectives are means over the full feature depth, so numbers are
//! directly comparable across models.

use crate::blobs::{generate_blobs, BlobDataset, BlobSpec};
use crate::codebook::{codebook_gradient, init_codebook, sgd_step, vq_objective, Codebook};
use crate::depthwise::{
    dvq_partial_losses, svq_quantize, CodebookBank, FeatureSplitSpec, SpatialPartition,
};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::matrix::Matrix;
use crate::seed::{derive_seed, rng_from};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fraction of each dataset used for training; the remainder evaluates.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StaticModel {
    Dvq,
    Vq,
    VqPlus,
    Svq,
    Random,
}

impl StaticModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            StaticModel::Dvq => "dvq",
            StaticModel::Vq => "vq",
            StaticModel::VqPlus => "vq-plus",
            StaticModel::Svq => "svq",
            StaticModel::Random => "random",
        }
    }
}

fn default_steps() -> usize {
    5000
}

fn default_lr() -> f64 {
    1e-2
}

fn default_batch() -> usize {
    128
}

fn default_record_interval() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticTrainConfig {
    pub model: StaticModel,
    pub k: usize,
    /// Number of codebooks (feature slices for `dvq`, sample bands for
    /// `svq`); must be 1 for the single-codebook models.
    pub l: usize,
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Record a training-loss point every this many steps (step 0 and the
    /// last step are always recorded).
    #[serde(default = "default_record_interval")]
    pub record_interval: usize,
}

impl StaticTrainConfig {
    pub fn new(model: StaticModel, k: usize, l: usize, seed: u64) -> Self {
        StaticTrainConfig {
            model,
            k,
            l,
            seed,
            steps: default_steps(),
            lr: default_lr(),
            batch: default_batch(),
            record_interval: default_record_interval(),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if self.l == 0 {
            return Err(Error::invalid("l must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("lr must be finite and > 0, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be >= 1"));
        }
        match self.model {
            StaticModel::Dvq => {
                if !d.is_multiple_of(self.l) {
                    return Err(Error::invalid(format!(
                        "dvq needs l to divide d, got d={d}, l={}",
                        self.l
                    )));
                }
            }
            StaticModel::Svq => {
                if self.l > self.batch {
                    return Err(Error::invalid(format!(
                        "svq needs at least one sample per band, got batch={}, l={}",
                        self.batch, self.l
                    )));
                }
            }
            StaticModel::Vq | StaticModel::VqPlus | StaticModel::Random => {
                if self.l != 1 {
                    return Err(Error::invalid(format!(
                        "{} uses a single codebook; l must be 1, got {}",
                        self.model.as_str(),
                        self.l
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The codebook(s) a static run produced.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedStatic {
    Single(Codebook),
    Bank(CodebookBank),
    Spatial(Vec<Codebook>),
}

/// Minibatch training losses plus the held-out final score.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    /// `(step, minibatch loss before that step's update)`.
    pub train: Vec<(usize, f64)>,
    pub final_test_loss: f64,
}

fn split_dataset(ds: &BlobDataset) -> Result<(Matrix, Matrix)> {
    let n_train = ((ds.data.rows() as f64) * TRAIN_FRACTION).floor() as usize;
    if n_train == 0 || n_train == ds.data.rows() {
        return Err(Error::invalid(format!(
            "dataset with {} rows cannot be split {}/{}",
            ds.data.rows(),
            TRAIN_FRACTION,
            1.0 - TRAIN_FRACTION
        )));
    }
    ds.data.split_rows(n_train)
}

fn sample_batch(train: &Matrix, batch: usize, seed: u64, step: usize) -> Result<Matrix> {
    let mut rng = rng_from(derive_seed(seed, step as u64));
    let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..train.rows())).collect();
    train.select_rows(&idx)
}

/// Band sizes for cutting `n` samples into `l` contiguous groups, earlier
/// bands taking the remainder — the same rule as
/// [`SpatialPartition::row_bands`].
fn band_sizes(n: usize, l: usize) -> Vec<usize> {
    let base = n / l;
    let rem = n % l;
    (0..l).map(|b| base + usize::from(b < rem)).collect()
}

fn eval_model(test: &Matrix, model: &TrainedStatic) -> Result<f64> {
    match model {
        TrainedStatic::Single(cb) => vq_objective(test, cb),
        TrainedStatic::Bank(bank) => {
            let (total, _) = dvq_partial_losses(&LatentGrid::from_matrix(test), bank)?;
            Ok(total)
        }
        TrainedStatic::Spatial(cbs) => {
            let part = SpatialPartition::row_bands(1, test.rows(), cbs.len())?;
            let r = svq_quantize(&LatentGrid::from_matrix(test), cbs, &part)?;
            Ok(r.total_loss())
        }
    }
}

fn check_finite_loss(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step: step as u64,
            context: "minibatch loss is not finite".to_string(),
        })
    }
}

/// Train one model on one dataset. Seed layout: `derive(seed, 0)` feeds
/// codebook init (child `i` per codebook), `derive(seed, 1)` feeds
/// minibatch sampling (child `t` per step).
pub fn train_static(
    ds: &BlobDataset,
    cfg: &StaticTrainConfig,
) -> Result<(LossCurve, TrainedStatic)> {
    let d = ds.data.cols();
    cfg.validate(d)?;
    let (train, test) = split_dataset(ds)?;
    if cfg.model == StaticModel::Svq && cfg.l > test.rows() {
        return Err(Error::invalid(format!(
            "svq with l={} needs at least that many evaluation rows, have {}",
            cfg.l,
            test.rows()
        )));
    }

    let init_seed = derive_seed(cfg.seed, 0);
    let batch_seed = derive_seed(cfg.seed, 1);
    // `random` is an untrained control: initialize and evaluate.
    let steps = if cfg.model == StaticModel::Random { 0 } else { cfg.steps };

    let mut model = match cfg.model {
        StaticModel::Vq | StaticModel::VqPlus | StaticModel::Random => {
            TrainedStatic::Single(init_codebook(cfg.k, d, derive_seed(init_seed, 0))?)
        }
        StaticModel::Dvq => {
            let split = FeatureSplitSpec::equal(d, cfg.l)?;
            let cbs: Vec<Codebook> = (0..cfg.l)
                .map(|i| init_codebook(cfg.k, split.size(i), derive_seed(init_seed, i as u64)))
                .collect::<Result<_>>()?;
            TrainedStatic::Bank(CodebookBank::new(cbs, split)?)
        }
        StaticModel::Svq => TrainedStatic::Spatial(
            (0..cfg.l)
                .map(|i| init_codebook(cfg.k, d, derive_seed(init_seed, i as u64)))
                .collect::<Result<_>>()?,
        ),
    };

    let mut curve = Vec::new();
    for step in 0..steps {
        let batch = sample_batch(&train, cfg.batch, batch_seed, step)?;
        let loss = match &mut model {
            TrainedStatic::Single(cb) => {
                let g = codebook_gradient(&batch, cb)?;
                *cb = sgd_step(cb, &g.grad, cfg.lr)?;
                g.mean_sq_distance
            }
            TrainedStatic::Bank(bank) => {
                let split = bank.split().clone();
                let mut total = 0.0;
                for (i, cb) in bank.codebooks_mut().iter_mut().enumerate() {
                    let slice = batch.slice_cols(split.offset(i), split.size(i))?;
                    let g = codebook_gradient(&slice, cb)?;
                    *cb = sgd_step(cb, &g.grad, cfg.lr)?;
                    total += g.mean_sq_distance;
                }
                total
            }
            TrainedStatic::Spatial(cbs) => {
                // The objective is the batch-wide mean, so each band's local
                // gradient is rescaled by its share of the batch.
                let n = batch.rows();
                let sizes = band_sizes(n, cbs.len());
                let mut total = 0.0;
                let mut start = 0;
                for (cb, &sz) in cbs.iter_mut().zip(&sizes) {
                    let band = batch.select_rows(&(start..start + sz).collect::<Vec<_>>())?;
                    let share = sz as f64 / n as f64;
                    let mut g = codebook_gradient(&band, cb)?;
                    g.grad.scale(share);
                    *cb = sgd_step(cb, &g.grad, cfg.lr)?;
                    total += share * g.mean_sq_distance;
                    start += sz;
                }
                total
            }
        };
        check_finite_loss(loss, step)?;
        if cfg.record_interval > 0 && (step % cfg.record_interval == 0 || step + 1 == steps) {
            curve.push((step, loss));
        }
    }

    let final_test_loss = eval_model(&test, &model)?;
    check_finite_loss(final_test_loss, steps)?;
    Ok((
        LossCurve {
            train: curve,
            final_test_loss,
        },
        model,
    ))
}

/// Held-out loss of an untrained codebook — the control every trained model
/// must beat.
pub fn random_baseline(ds: &BlobDataset, k: usize, seed: u64) -> Result<f64> {
    let cfg = StaticTrainConfig::new(StaticModel::Random, k, 1, seed);
    let (curve, _) = train_static(ds, &cfg)?;
    Ok(curve.final_test_loss)
}

/// One repetition of the Monte-Carlo protocol: fresh data and fresh init,
/// both derived from `base seed x repetition index`.
pub fn run_single_repetition(
    blob_spec: &BlobSpec,
    cfg: &StaticTrainConfig,
    repetition: usize,
) -> Result<f64> {
    let rep_seed = derive_seed(cfg.seed, repetition as u64);
    let data_seed = derive_seed(rep_seed, 0);
    let model_seed = derive_seed(rep_seed, 1);
    let ds = generate_blobs(&BlobSpec {
        seed: data_seed,
        ..blob_spec.clone()
    })?;
    let run_cfg = StaticTrainConfig {
        seed: model_seed,
        ..cfg.clone()
    };
    let (curve, _) = train_static(&ds, &run_cfg)?;
    Ok(curve.final_test_loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub mean: f64,
    /// Sample standard deviation (n-1); zero for a single repetition.
    pub std: f64,
    /// Final test losses in repetition order.
    pub finals: Vec<f64>,
}

pub fn summarize_finals(finals: Vec<f64>) -> MonteCarloSummary {
    let n = finals.len() as f64;
    let mean = finals.iter().sum::<f64>() / n;
    let std = if finals.len() > 1 {
        (finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MonteCarloSummary { mean, std, finals }
}

/// Repeat a configuration over fresh data/init seeds. Repetitions fan out
/// on the rayon pool when `parallel` is enabled; `finals` is ordered by
/// repetition index either way.
pub fn monte_carlo(
    blob_spec: &BlobSpec,
    cfg: &StaticTrainConfig,
    repetitions: usize,
) -> Result<MonteCarloSummary> {
    if repetitions == 0 {
        return Err(Error::EmptyInput("monte_carlo needs at least one repetition"));
    }
    #[cfg(feature = "parallel")]
    let finals: Vec<f64> = (0..repetitions)
        .into_par_iter()
        .map(|r| run_single_repetition(blob_spec, cfg, r))
        .collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let finals: Vec<f64> = (0..repetitions)
        .map(|r| run_single_repetition(blob_spec, cfg, r))
        .collect::<Result<_>>()?;
    Ok(summarize_finals(finals))
}

/// One long-format result row; `schema` tags the CSV layout version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema: String,
    pub model: String,
    pub k: usize,
    pub l: usize,
    pub d: usize,
    pub n_g: usize,
    pub repetition: usize,
    pub final_test_loss: f64,
}

/// Sort key giving a canonical row order for serialized results.
pub fn row_sort_key(r: &ResultRow) -> (String, usize, usize, usize, usize, usize) {
    (r.model.clone(), r.d, r.n_g, r.k, r.l, r.repetition)
}

/// Cross product of codebook sizes and data dimensions, each cell repeated
/// `repetitions` times, optionally with a paired untrained control per cell.
/// Jobs fan out in parallel but rows come back sorted, so output is
/// deterministic regardless of worker count.
pub fn sweep_k_vs_d(
    blob_template: &BlobSpec,
    cfg_template: &StaticTrainConfig,
    ks: &[usize],
    dims: &[usize],
    repetitions: usize,
    include_random: bool,
) -> Result<Vec<ResultRow>> {
    if ks.is_empty() || dims.is_empty() {
        return Err(Error::EmptyInput("sweep needs at least one k and one d"));
    }
    let mut jobs = Vec::new();
    for &d in dims {
        for &k in ks {
            for rep in 0..repetitions {
                jobs.push((d, k, StaticModel::Vq, rep));
                if include_random {
                    jobs.push((d, k, StaticModel::Random, rep));
                }
            }
        }
    }

    let run = |&(d, k, model, rep): &(usize, usize, StaticModel, usize)| -> Result<ResultRow> {
        let blob = BlobSpec { d, ..blob_template.clone() };
        let cfg = StaticTrainConfig {
            model,
            k,
            l: 1,
            ..cfg_template.clone()
        };
        let final_test_loss = run_single_repetition(&blob, &cfg, rep)?;
        Ok(ResultRow {
            schema: crate::metrics::RESULTS_SCHEMA.to_string(),
            model: model.as_str().to_string(),
            k,
            l: 1,
            d,
            n_g: blob.n_components,
            repetition: rep,
            final_test_loss,
        })
    };

    #[cfg(feature = "parallel")]
    let mut rows: Vec<ResultRow> = jobs.par_iter().map(run).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let mut rows: Vec<ResultRow> = jobs.iter().map(run).collect::<Result<_>>()?;

    rows.sort_by_key(row_sort_key);
    Ok(rows)
}
