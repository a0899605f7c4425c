//! `gen-blobs` and `gen-shapes`: dataset generation commands.

use crate::config::{load_config, GenBlobsConfig, GenShapesConfig, GEN_BLOBS_SCHEMA, GEN_SHAPES_SCHEMA};
use crate::context::{finish, print_json, CliResult, OutDir, RunManifest};
use crate::CommonArgs;
use dvq::blobs::generate_blobs;
use dvq::shapes::{generate_shapes, ShapeKind};
use serde::Serialize;

const DATASET_CSV: &str = "dataset.csv";
const MEANS_CSV: &str = "means.csv";
const DATASET_DVQD: &str = "dataset.dvqd";
const SUMMARY_JSON: &str = "summary.json";

#[derive(Serialize)]
struct BlobsSummary {
    schema: &'static str,
    n_samples: usize,
    d: usize,
    n_components: usize,
    /// Samples drawn from each component, in component order.
    label_counts: Vec<u64>,
}

pub fn gen_blobs(args: &CommonArgs) -> CliResult<()> {
    let mut cfg: GenBlobsConfig = load_config(args.config.as_deref(), GEN_BLOBS_SCHEMA)?;
    if let Some(seed) = args.seed {
        cfg.blobs.seed = seed;
    }
    cfg.blobs.validate()?;
    if args.dry_run {
        println!("dry-run: would generate this blob dataset, writing nothing");
        return print_json(&cfg);
    }

    let manifest = RunManifest::new(
        "gen-blobs",
        Some(cfg.blobs.seed),
        &cfg,
        &[DATASET_CSV, MEANS_CSV, SUMMARY_JSON],
    )?;
    let out = OutDir::prepare(args.out.as_deref(), &manifest)?;

    let ds = generate_blobs(&cfg.blobs)?;

    // dataset.csv: component label plus the sample coordinates, one row
    // per sample. Float formatting is shortest-round-trip, so the file is
    // byte-identical across runs of the same config.
    let mut w = csv::Writer::from_writer(out.create(DATASET_CSV)?);
    write_point_csv(&mut w, "component", &ds.labels, &ds.data)?;
    finish(w.into_inner().map_err(|e| dvq::Error::Io(e.into_error()))?, DATASET_CSV)?;

    let mut w = csv::Writer::from_writer(out.create(MEANS_CSV)?);
    let mean_ids: Vec<usize> = (0..ds.means.rows()).collect();
    write_point_csv(&mut w, "component", &mean_ids, &ds.means)?;
    finish(w.into_inner().map_err(|e| dvq::Error::Io(e.into_error()))?, MEANS_CSV)?;

    let mut label_counts = vec![0u64; cfg.blobs.n_components];
    for &l in &ds.labels {
        label_counts[l] += 1;
    }
    out.write_json(
        SUMMARY_JSON,
        &BlobsSummary {
            schema: "dvq.summary.blobs/1",
            n_samples: cfg.blobs.n_samples,
            d: cfg.blobs.d,
            n_components: cfg.blobs.n_components,
            label_counts,
        },
    )?;
    println!(
        "gen-blobs: {} samples (d={}, n_g={}) -> {}",
        cfg.blobs.n_samples,
        cfg.blobs.d,
        cfg.blobs.n_components,
        out.path(DATASET_CSV).display()
    );
    Ok(())
}

fn write_point_csv<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    id_column: &str,
    ids: &[usize],
    points: &dvq::Matrix,
) -> CliResult<()> {
    let mut header = vec![id_column.to_string()];
    header.extend((0..points.cols()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(dvq::Error::from)?;
    for (id, row) in ids.iter().zip(points.iter_rows()) {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(dvq::Error::from)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ShapesSummary {
    schema: &'static str,
    n_samples: usize,
    h: usize,
    w: usize,
    c: usize,
    /// Images per shape kind, ordered as [`ShapeKind::ALL`].
    label_counts: Vec<u64>,
    labels: Vec<&'static str>,
}

pub fn gen_shapes(args: &CommonArgs) -> CliResult<()> {
    let mut cfg: GenShapesConfig = load_config(args.config.as_deref(), GEN_SHAPES_SCHEMA)?;
    if let Some(seed) = args.seed {
        cfg.shapes.seed = seed;
    }
    cfg.shapes.validate()?;
    if args.dry_run {
        println!("dry-run: would generate this shape dataset, writing nothing");
        return print_json(&cfg);
    }

    let manifest = RunManifest::new(
        "gen-shapes",
        Some(cfg.shapes.seed),
        &cfg,
        &[DATASET_DVQD, SUMMARY_JSON],
    )?;
    let out = OutDir::prepare(args.out.as_deref(), &manifest)?;

    let ds = generate_shapes(&cfg.shapes)?;
    let mut w = out.create(DATASET_DVQD)?;
    dvq::io::write_image_dataset(&ds, &mut w)?;
    finish(w, DATASET_DVQD)?;

    let mut label_counts = vec![0u64; ShapeKind::ALL.len()];
    for &l in ds.labels.as_deref().unwrap_or(&[]) {
        label_counts[l as usize] += 1;
    }
    out.write_json(
        SUMMARY_JSON,
        &ShapesSummary {
            schema: "dvq.summary.shapes/1",
            n_samples: ds.len(),
            h: ds.shape.h,
            w: ds.shape.w,
            c: ds.shape.c,
            label_counts,
            labels: ShapeKind::ALL.iter().map(|k| k.name()).collect(),
        },
    )?;
    println!(
        "gen-shapes: {} images ({}x{}) -> {}",
        ds.len(),
        ds.shape.h,
        ds.shape.w,
        out.path(DATASET_DVQD).display()
    );
    Ok(())
}
