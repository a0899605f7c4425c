//! `ingest-cifar`: convert CIFAR-10 binary batches to the internal format.

use crate::context::{finish, print_json, CliError, CliResult, OutDir, RunManifest};
use dvq::cifar::{read_cifar_files, CIFAR_CLASSES};
use dvq::image::ImageDataset;
use dvq::Matrix;
use serde::Serialize;
use std::path::PathBuf;

const DATASET_DVQD: &str = "dataset.dvqd";
const SUMMARY_JSON: &str = "summary.json";

/// Target pixel range. The file format stores bytes; training code accepts
/// either scaling, so the choice is recorded in manifest and summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PixelScale {
    /// `[0, 1]`: byte / 255.
    Unit,
    /// `[-1, 1]`: 2 * (byte / 255) - 1.
    Symmetric,
}

#[derive(Serialize)]
struct IngestConfig {
    files: Vec<PathBuf>,
    scale: PixelScale,
}

#[derive(Serialize)]
struct CifarSummary {
    schema: &'static str,
    n_images: usize,
    h: usize,
    w: usize,
    c: usize,
    scale: PixelScale,
    /// Images per class, in label order 0..=9.
    label_counts: Vec<u64>,
}

pub fn ingest_cifar(
    files: &[PathBuf],
    scale: PixelScale,
    out: Option<&std::path::Path>,
    dry_run: bool,
) -> CliResult<()> {
    let cfg = IngestConfig {
        files: files.to_vec(),
        scale,
    };
    if dry_run {
        println!("dry-run: would ingest these batches, writing nothing");
        return print_json(&cfg);
    }
    let manifest = RunManifest::new("ingest-cifar", None, &cfg, &[DATASET_DVQD, SUMMARY_JSON])?;
    let out = OutDir::prepare(out, &manifest)?;

    let mut ds = read_cifar_files(files)?;
    if scale == PixelScale::Symmetric {
        let remapped: Vec<f64> = ds.images.data().iter().map(|&v| 2.0 * v - 1.0).collect();
        ds = ImageDataset::new(
            Matrix::from_vec(ds.images.rows(), ds.images.cols(), remapped)?,
            ds.shape,
            ds.labels,
        )?;
    }

    let mut w = out.create(DATASET_DVQD)?;
    dvq::io::write_image_dataset(&ds, &mut w)?;
    finish(w, DATASET_DVQD)?;

    let mut label_counts = vec![0u64; CIFAR_CLASSES as usize];
    for &l in ds.labels.as_deref().ok_or_else(|| {
        CliError::Data("cifar decoding produced no labels".to_string())
    })? {
        label_counts[l as usize] += 1;
    }
    out.write_json(
        SUMMARY_JSON,
        &CifarSummary {
            schema: "dvq.summary.cifar/1",
            n_images: ds.len(),
            h: ds.shape.h,
            w: ds.shape.w,
            c: ds.shape.c,
            scale,
            label_counts,
        },
    )?;
    println!(
        "ingest-cifar: {} images from {} file(s) -> {}",
        ds.len(),
        files.len(),
        out.path(DATASET_DVQD).display()
    );
    Ok(())
}
