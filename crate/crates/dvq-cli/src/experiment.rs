//! `static-experiment`: Monte-Carlo grids over the blob datasets.
//!
//! The config lists either explicit model cells (`[[models]]`) or a K-vs-D
//! sweep (`[sweep]`); either way the command expands to a flat list of
//! jobs, one per `(model, k, l, d, repetition)`. Jobs fan out on the
//! worker pool, results land in `results.csv` (canonically sorted, so the
//! file is byte-identical however the pool schedules), and `summary.json`
//! aggregates each cell to mean ± std.
//!
//! Interrupted runs resume: rows already present in `results.csv` under a
//! matching manifest are kept and their jobs skipped. Because every job
//! derives its seeds from `(config seed, repetition)` alone, a resumed run
//! produces exactly the bytes the uninterrupted run would have.

use crate::config::{load_config, ExperimentConfig, STATIC_EXPERIMENT_SCHEMA};
use crate::context::{print_json, CliError, CliResult, OutDir, RunManifest};
use crate::CommonArgs;
use dvq::metrics::{summarize_rows, write_results_csv, read_results_csv, SummaryCell, RESULTS_SCHEMA};
use dvq::static_lab::{row_sort_key, run_single_repetition, ResultRow, StaticModel};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeSet;

const RESULTS_CSV: &str = "results.csv";
const SUMMARY_JSON: &str = "summary.json";

/// One grid cell repetition, fully resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Job {
    model: StaticModel,
    k: usize,
    l: usize,
    d: usize,
    repetition: usize,
}

/// The identity a finished row is matched on during resume.
type RowKey = (String, usize, usize, usize, usize, usize);

fn job_key(job: &Job, n_g: usize) -> RowKey {
    (
        job.model.as_str().to_string(),
        job.k,
        job.l,
        job.d,
        n_g,
        job.repetition,
    )
}

fn row_key(row: &ResultRow) -> RowKey {
    (row.model.clone(), row.k, row.l, row.d, row.n_g, row.repetition)
}

/// Expands the config into the deterministic job list.
fn build_jobs(cfg: &ExperimentConfig) -> CliResult<Vec<Job>> {
    let mut jobs = Vec::new();
    if let Some(sweep) = &cfg.sweep {
        if sweep.ks.is_empty() || sweep.dims.is_empty() {
            return Err(CliError::Config("sweep needs at least one k and one d".to_string()));
        }
        for &d in &sweep.dims {
            for &k in &sweep.ks {
                for repetition in 0..cfg.repetitions {
                    jobs.push(Job { model: StaticModel::Vq, k, l: 1, d, repetition });
                    if sweep.include_random {
                        jobs.push(Job { model: StaticModel::Random, k, l: 1, d, repetition });
                    }
                }
            }
        }
    } else {
        let d = cfg.data.d.expect("validated: d required with [[models]]");
        for m in &cfg.models {
            for repetition in 0..cfg.repetitions {
                jobs.push(Job { model: m.model, k: m.k, l: m.l, d, repetition });
            }
        }
    }

    // Every distinct cell must be valid before any work starts.
    let mut checked: BTreeSet<(usize, usize, usize, &'static str)> = BTreeSet::new();
    for j in &jobs {
        if !checked.insert((j.d, j.k, j.l, j.model.as_str())) {
            continue;
        }
        cfg.blob_spec(j.d)
            .validate()
            .map_err(|e| CliError::Config(format!("data for d={}: {e}", j.d)))?;
        cfg.train_config(j.model, j.k, j.l).validate(j.d).map_err(|e| {
            CliError::Config(format!(
                "cell {} k={} l={} d={}: {e}",
                j.model.as_str(),
                j.k,
                j.l,
                j.d
            ))
        })?;
    }
    Ok(jobs)
}

fn run_job(cfg: &ExperimentConfig, job: &Job) -> dvq::Result<ResultRow> {
    let blob = cfg.blob_spec(job.d);
    let train = cfg.train_config(job.model, job.k, job.l);
    let final_test_loss = run_single_repetition(&blob, &train, job.repetition)?;
    Ok(ResultRow {
        schema: RESULTS_SCHEMA.to_string(),
        model: job.model.as_str().to_string(),
        k: job.k,
        l: job.l,
        d: job.d,
        n_g: blob.n_components,
        repetition: job.repetition,
        final_test_loss,
    })
}

/// Plan entry printed by `--dry-run`.
#[derive(Serialize)]
struct JobView {
    model: &'static str,
    k: usize,
    l: usize,
    d: usize,
    n_g: usize,
    repetition: usize,
}

#[derive(Serialize)]
struct StaticSummary {
    schema: &'static str,
    cells: Vec<SummaryCell>,
}

pub fn static_experiment(args: &CommonArgs) -> CliResult<()> {
    let mut cfg: ExperimentConfig = load_config(args.config.as_deref(), STATIC_EXPERIMENT_SCHEMA)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let jobs = build_jobs(&cfg)?;

    if args.dry_run {
        let grid: Vec<JobView> = jobs
            .iter()
            .map(|j| JobView {
                model: j.model.as_str(),
                k: j.k,
                l: j.l,
                d: j.d,
                n_g: cfg.data.n_components,
                repetition: j.repetition,
            })
            .collect();
        print_json(&grid)?;
        println!("dry-run: {} jobs resolved, nothing computed", jobs.len());
        return Ok(());
    }

    let manifest = RunManifest::new(
        "static-experiment",
        Some(cfg.seed),
        &cfg,
        &[RESULTS_CSV, SUMMARY_JSON],
    )?;
    let out = OutDir::prepare(args.out.as_deref(), &manifest)?;

    // Resume: keep rows whose keys belong to this grid, skip their jobs.
    let mut kept: Vec<ResultRow> = Vec::new();
    let results_path = out.path(RESULTS_CSV);
    if out.resuming && results_path.exists() {
        let file = std::fs::File::open(&results_path).map_err(dvq::Error::from)?;
        let existing = read_results_csv(file)?;
        let valid_keys: BTreeSet<RowKey> = jobs
            .iter()
            .map(|j| job_key(j, cfg.data.n_components))
            .collect();
        let mut seen: BTreeSet<RowKey> = BTreeSet::new();
        for row in existing {
            let key = row_key(&row);
            if !valid_keys.contains(&key) {
                return Err(CliError::Data(format!(
                    "results.csv row {key:?} is not part of this experiment; \
                     refusing to mix result sets"
                )));
            }
            if !seen.insert(key.clone()) {
                return Err(CliError::Data(format!(
                    "results.csv contains duplicate rows for {key:?}"
                )));
            }
            kept.push(row);
        }
    }
    let done: BTreeSet<RowKey> = kept.iter().map(row_key).collect();
    let todo: Vec<Job> = jobs
        .iter()
        .filter(|j| !done.contains(&job_key(j, cfg.data.n_components)))
        .copied()
        .collect();

    // `--deterministic` forces serial execution; otherwise cells fan out
    // on the worker pool. Both orders feed the same canonical sort.
    #[cfg(feature = "parallel")]
    let fresh: Vec<ResultRow> = if args.deterministic {
        todo.iter().map(|j| run_job(&cfg, j)).collect::<dvq::Result<_>>()?
    } else {
        todo.par_iter().map(|j| run_job(&cfg, j)).collect::<dvq::Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let fresh: Vec<ResultRow> = todo.iter().map(|j| run_job(&cfg, j)).collect::<dvq::Result<_>>()?;

    let mut rows = kept;
    rows.extend(fresh);
    rows.sort_by_key(row_sort_key);

    let mut w = out.create(RESULTS_CSV)?;
    write_results_csv(&rows, &mut w)?;
    crate::context::finish(w, RESULTS_CSV)?;

    out.write_json(
        SUMMARY_JSON,
        &StaticSummary {
            schema: "dvq.summary.static/1",
            cells: summarize_rows(&rows),
        },
    )?;
    println!(
        "static-experiment: {} jobs ({} resumed); wrote {} rows -> {}",
        jobs.len(),
        done.len(),
        rows.len(),
        results_path.display()
    );
    Ok(())
}
