//! `report`: aggregate result tables from one or more runs.
//!
//! Inputs are `results.csv` files written by `static-experiment`. The
//! command merges them into one long-format table (re-sorted canonically)
//! and aggregates each `(model, k, l, d, n_g)` cell to mean ± std, as both
//! JSON and a plot-ready CSV.

use crate::context::{finish, print_json, CliError, CliResult, OutDir, RunManifest};
use dvq::metrics::{summarize_rows, write_results_csv, read_results_csv, SummaryCell};
use dvq::static_lab::{row_sort_key, ResultRow};
use serde::Serialize;
use std::collections::BTreeSet;
use std::path::PathBuf;

const RESULTS_CSV: &str = "results.csv";
const SUMMARY_JSON: &str = "summary.json";
const SUMMARY_CSV: &str = "summary.csv";

#[derive(Serialize)]
struct ReportConfig {
    inputs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct StaticSummary {
    schema: &'static str,
    cells: Vec<SummaryCell>,
}

pub fn report(inputs: &[PathBuf], out: Option<&std::path::Path>, dry_run: bool) -> CliResult<()> {
    let cfg = ReportConfig {
        inputs: inputs.to_vec(),
    };
    if dry_run {
        println!("dry-run: would aggregate these tables, writing nothing");
        return print_json(&cfg);
    }
    let manifest = RunManifest::new(
        "report",
        None,
        &cfg,
        &[RESULTS_CSV, SUMMARY_JSON, SUMMARY_CSV],
    )?;
    let out = OutDir::prepare(out, &manifest)?;

    let mut rows: Vec<ResultRow> = Vec::new();
    for path in inputs {
        let file = std::fs::File::open(path).map_err(dvq::Error::from)?;
        rows.extend(read_results_csv(file)?);
    }
    if rows.is_empty() {
        return Err(CliError::Data("the input files contain no result rows".to_string()));
    }
    // The same repetition appearing twice would silently skew the means.
    let mut seen = BTreeSet::new();
    for r in &rows {
        let key = (r.model.clone(), r.k, r.l, r.d, r.n_g, r.repetition);
        if !seen.insert(key.clone()) {
            return Err(CliError::Data(format!(
                "duplicate result row for {key:?} across the inputs"
            )));
        }
    }
    rows.sort_by_key(row_sort_key);

    let mut w = out.create(RESULTS_CSV)?;
    write_results_csv(&rows, &mut w)?;
    finish(w, RESULTS_CSV)?;

    let cells = summarize_rows(&rows);
    let n_cells = cells.len();
    let mut w = csv::Writer::from_writer(out.create(SUMMARY_CSV)?);
    for cell in &cells {
        w.serialize(cell).map_err(dvq::Error::from)?;
    }
    finish(
        w.into_inner().map_err(|e| dvq::Error::Io(e.into_error()))?,
        SUMMARY_CSV,
    )?;
    out.write_json(
        SUMMARY_JSON,
        &StaticSummary {
            schema: "dvq.summary.static/1",
            cells,
        },
    )?;
    println!(
        "report: {} rows from {} file(s) -> {} cells in {}",
        rows.len(),
        inputs.len(),
        n_cells,
        out.path(SUMMARY_JSON).display()
    );
    Ok(())
}
