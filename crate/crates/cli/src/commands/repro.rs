//! `repro`: re-run a bundled desk-scale experiment suite and emit
//! plot-ready CSV tables.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use margscore::experiments::{
    run_gaussian_desk, run_ica_desk, run_star_desk, write_records_csv, write_summary_csv,
    DeskResult,
};

use crate::commands::resolve_out;
use crate::config::FileConfig;
use crate::errors::CliError;
use crate::manifest::write_manifest;
use crate::ReproArgs;

fn finish<C: Serialize>(
    out: &Path,
    suite: &str,
    x_name: &str,
    seed: u64,
    cfg: &C,
    result: &DeskResult,
    start: Instant,
) -> Result<(), CliError> {
    write_records_csv(&result.records, out.join("plot_data.csv"))?;
    write_summary_csv(&result.rows, out.join("summary.csv"))?;
    write_manifest(
        out,
        "repro",
        seed,
        &json!({ "suite": suite, "config": cfg }),
        json!({
            "x": x_name,
            "cells": result.rows.len(),
            "replicate_records": result.records.len(),
        }),
        start.elapsed().as_secs_f64(),
    )?;
    println!("{suite}: mean +/- 95% CI per ({x_name}, method)");
    for row in &result.rows {
        println!(
            "  {x_name}={:<8} {:<10} {:.6} +/- {:.6}  ({} reps)",
            row.x, row.method, row.mean, row.ci_half_width, row.reps
        );
    }
    println!("wrote {}", out.join("summary.csv").display());
    Ok(())
}

pub fn run(args: ReproArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let file = FileConfig::load(args.config.as_deref())?;
    let sec = file.repro.clone().unwrap_or_default();
    let out = resolve_out(args.out, file.out.clone())?;
    match args.name.as_str() {
        "gaussian-desk" => {
            let mut cfg = sec.gaussian.unwrap_or_default();
            if let Some(seed) = args.seed.or(file.seed) {
                cfg.seed = seed;
            }
            let result = run_gaussian_desk(&cfg)?;
            finish(&out, "gaussian-desk", "n", cfg.seed, &cfg, &result, start)
        }
        "ica-desk" => {
            let mut cfg = sec.ica.unwrap_or_default();
            if let Some(seed) = args.seed.or(file.seed) {
                cfg.seed = seed;
            }
            let result = run_ica_desk(&cfg)?;
            finish(&out, "ica-desk", "d", cfg.seed, &cfg, &result, start)
        }
        "star-desk" => {
            let mut cfg = sec.star.unwrap_or_default();
            if let Some(seed) = args.seed.or(file.seed) {
                cfg.seed = seed;
            }
            let result = run_star_desk(&cfg)?;
            finish(&out, "star-desk", "missing_p", cfg.seed, &cfg, &result, start)
        }
        other => Err(CliError::config(format!(
            "unknown suite {other:?}; use gaussian-desk | ica-desk | star-desk"
        ))),
    }
}
