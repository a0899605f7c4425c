//! `train-ae`: train the quantized-bottleneck autoencoder.
//!
//! Images come from the synthetic shape generator or a dataset file
//! (`gen-shapes` / `ingest-cifar` output). The run streams one metrics
//! record per recording step to `metrics.jsonl` (flushed per record, so an
//! interrupted run keeps what it measured), then writes the final model to
//! `checkpoint.dvqk` and the train/test evaluation to `summary.json`.

use crate::config::{load_config, AeData, TrainAeConfig, TRAIN_AE_SCHEMA};
use crate::context::{finish, print_json, CliResult, OutDir, RunManifest};
use crate::CommonArgs;
use dvq::bottleneck::{train_autoencoder, BottleneckState, EvalSummary, TrainSink};
use dvq::image::ImageDataset;
use dvq::metrics::MetricsRecord;
use dvq::shapes::{generate_shapes, ShapeSpec};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};

const METRICS_JSONL: &str = "metrics.jsonl";
const CHECKPOINT_DVQK: &str = "checkpoint.dvqk";
const SUMMARY_JSON: &str = "summary.json";

/// Streams records to disk as training produces them.
struct JsonlSink {
    out: BufWriter<File>,
}

impl TrainSink for JsonlSink {
    fn on_metrics(&mut self, record: &MetricsRecord, _state: &BottleneckState) -> dvq::Result<()> {
        dvq::metrics::write_metrics_jsonl(std::slice::from_ref(record), &mut self.out)?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct TrainSummary {
    schema: &'static str,
    steps: usize,
    final_train: EvalSummary,
    final_test: EvalSummary,
}

fn load_images(data: &AeData) -> CliResult<ImageDataset> {
    match data {
        AeData::Shapes { img, n_samples, seed } => {
            let spec = ShapeSpec {
                img: *img,
                n_samples: *n_samples,
                seed: *seed,
            };
            Ok(generate_shapes(&spec)?)
        }
        AeData::Dataset { path } => {
            let file = File::open(path).map_err(dvq::Error::from)?;
            Ok(dvq::io::read_image_dataset(std::io::BufReader::new(file))?)
        }
    }
}

pub fn train_ae(args: &CommonArgs) -> CliResult<()> {
    let mut cfg: TrainAeConfig = load_config(args.config.as_deref(), TRAIN_AE_SCHEMA)?;
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
    }
    if args.deterministic {
        cfg.model.data_parallel = false;
    }
    cfg.model.validate()?;
    if args.dry_run {
        println!("dry-run: would train this model, writing nothing");
        return print_json(&cfg);
    }

    let manifest = RunManifest::new(
        "train-ae",
        Some(cfg.model.seed),
        &cfg,
        &[METRICS_JSONL, CHECKPOINT_DVQK, SUMMARY_JSON],
    )?;
    let out = OutDir::prepare(args.out.as_deref(), &manifest)?;

    let ds = load_images(&cfg.data)?;
    let mut sink = JsonlSink {
        out: out.create(METRICS_JSONL)?,
    };
    let report = train_autoencoder(&ds, &cfg.model, &mut sink)?;
    finish(sink.out, METRICS_JSONL)?;

    let mut w = out.create(CHECKPOINT_DVQK)?;
    dvq::io::write_checkpoint(&report.state, &mut w)?;
    finish(w, CHECKPOINT_DVQK)?;

    out.write_json(
        SUMMARY_JSON,
        &TrainSummary {
            schema: "dvq.summary.train-ae/1",
            steps: cfg.model.steps,
            final_train: report.final_train,
            final_test: report.final_test,
        },
    )?;
    println!(
        "train-ae: {} steps; final test loss {:.6} ({:.4} bits/dim) -> {}",
        cfg.model.steps,
        report.final_test.loss.total,
        report.final_test.bits_per_dim,
        out.path(CHECKPOINT_DVQK).display()
    );
    Ok(())
}
