//! Configuration files.
//!
//! Every config is a TOML document whose top-level `schema` field names
//! the expected layout (e.g. `dvq.static-experiment/1`); unknown fields
//! are rejected so typos fail loudly instead of silently falling back to
//! defaults. Environment never carries scientific parameters — only the
//! `--seed` flag may override the seed recorded in the file.

use crate::context::{CliError, CliResult};
use dvq::blobs::BlobSpec;
use dvq::bottleneck::AeTrainConfig;
use dvq::shapes::ShapeSpec;
use dvq::static_lab::{StaticModel, StaticTrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const GEN_BLOBS_SCHEMA: &str = "dvq.gen-blobs/1";
pub const GEN_SHAPES_SCHEMA: &str = "dvq.gen-shapes/1";
pub const STATIC_EXPERIMENT_SCHEMA: &str = "dvq.static-experiment/1";
pub const TRAIN_AE_SCHEMA: &str = "dvq.train-ae/1";

/// Loads and schema-checks a TOML config. The file is parsed twice: a
/// tolerant pass that only looks at `schema` (so the error for a wrong
/// schema names both versions), then the strict typed pass.
pub fn load_config<T: DeserializeOwned>(path: Option<&Path>, expected_schema: &str) -> CliResult<T> {
    let path = path.ok_or_else(|| {
        CliError::Config(format!(
            "--config PATH is required (expecting a {expected_schema:?} file)"
        ))
    })?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("could not read {}: {e}", path.display())))?;

    #[derive(Deserialize)]
    struct SchemaProbe {
        schema: Option<String>,
    }
    let probe: SchemaProbe = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    match probe.schema {
        Some(s) if s == expected_schema => {}
        Some(s) => {
            return Err(CliError::Config(format!(
                "{}: schema is {s:?}, this command expects {expected_schema:?}",
                path.display()
            )))
        }
        None => {
            return Err(CliError::Config(format!(
                "{}: missing `schema` field (expected {expected_schema:?})",
                path.display()
            )))
        }
    }
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------
// gen-blobs / gen-shapes
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenBlobsConfig {
    pub schema: String,
    pub blobs: BlobSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenShapesConfig {
    pub schema: String,
    pub shapes: ShapeSpec,
}

// ---------------------------------------------------------------------
// static-experiment
// ---------------------------------------------------------------------

/// Data template for the blob experiments. `d` may be omitted when a
/// `[sweep]` section supplies the dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobTemplate {
    pub n_components: usize,
    pub n_samples: usize,
    pub d: Option<usize>,
    pub sigma: Option<f64>,
}

/// Optimization parameters shared by every cell of the experiment.
/// Defaults match [`StaticTrainConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub record_interval: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        let t = StaticTrainConfig::new(StaticModel::Vq, 1, 1, 0);
        TrainParams {
            steps: t.steps,
            lr: t.lr,
            batch: t.batch,
            record_interval: t.record_interval,
        }
    }
}

fn default_one() -> usize {
    1
}

/// One explicitly listed model cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model: StaticModel,
    pub k: usize,
    #[serde(default = "default_one")]
    pub l: usize,
}

/// A K-vs-D grid; each cell trains plain VQ, optionally paired with an
/// untrained random control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub ks: Vec<usize>,
    pub dims: Vec<usize>,
    #[serde(default)]
    pub include_random: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub seed: u64,
    pub repetitions: usize,
    pub data: BlobTemplate,
    #[serde(default)]
    pub train: TrainParams,
    /// Explicit model list (Fig.-3-style comparisons). Mutually exclusive
    /// with `sweep`.
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    /// K-vs-D grid (Fig.-2-style sweeps). Mutually exclusive with `models`.
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    /// Structural checks that don't need the job list: exactly one mode,
    /// and every referenced quantity present and positive.
    pub fn validate(&self) -> CliResult<()> {
        if self.repetitions == 0 {
            return Err(CliError::Config("repetitions must be >= 1".to_string()));
        }
        match (self.models.is_empty(), &self.sweep) {
            (false, Some(_)) => Err(CliError::Config(
                "config has both [[models]] and [sweep]; pick one".to_string(),
            )),
            (true, None) => Err(CliError::Config(
                "config needs either [[models]] or [sweep]".to_string(),
            )),
            (false, None) if self.data.d.is_none() => Err(CliError::Config(
                "data.d is required when using [[models]]".to_string(),
            )),
            _ => Ok(()),
        }
    }

    /// The blob spec for one cell; the seed is a placeholder, overwritten
    /// per repetition by the run protocol.
    pub fn blob_spec(&self, d: usize) -> BlobSpec {
        let mut spec = BlobSpec::new(self.data.n_components, d, self.data.n_samples, 0);
        if let Some(sigma) = self.data.sigma {
            spec.sigma = sigma;
        }
        spec
    }

    /// The training config for one cell.
    pub fn train_config(&self, model: StaticModel, k: usize, l: usize) -> StaticTrainConfig {
        StaticTrainConfig {
            model,
            k,
            l,
            seed: self.seed,
            steps: self.train.steps,
            lr: self.train.lr,
            batch: self.train.batch,
            record_interval: self.train.record_interval,
        }
    }
}

// ---------------------------------------------------------------------
// train-ae
// ---------------------------------------------------------------------

/// Where the images come from: generated on the fly or loaded from a
/// dataset file written by `gen-shapes` or `ingest-cifar`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum AeData {
    Shapes { img: usize, n_samples: usize, seed: u64 },
    Dataset { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainAeConfig {
    pub schema: String,
    pub data: AeData,
    pub model: AeTrainConfig,
}
