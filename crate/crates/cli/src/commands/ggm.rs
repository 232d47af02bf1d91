//! `ggm`: run an L1-regularized precision path and score edge recovery.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use margscore::data::{load_csv, standardize};
use margscore::ggm::{
    adjacency_from_precision, auto_threshold, edge_density, ground_truth_path, roc_auc,
    run_reg_path, write_adjacency_csv, PathEstimator, RegPathConfig,
};
use margscore::truncation::{TruncationRegion, WeightFunction};

use crate::commands::{resolve_out, resolve_truncation};
use crate::config::{parse_loss, FileConfig};
use crate::errors::CliError;
use crate::manifest::write_manifest;
use crate::GgmArgs;

/// Default reference densities for building ground-truth adjacencies from
/// fully observed data.
const DEFAULT_DENSITIES: [f64; 5] = [0.05, 0.10, 0.15, 0.20, 0.25];

/// Reads a 0/1 adjacency grid (no header) written by `gen`.
fn load_adjacency_csv(path: &Path, d: usize) -> Result<Array2<bool>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<bool>, CliError> = line
            .split(',')
            .map(|cell| match cell.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(CliError::config(format!(
                    "{}: row {}: expected 0 or 1, got {other:?}",
                    path.display(),
                    i + 1
                ))),
            })
            .collect();
        rows.push(row?);
    }
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(CliError::config(format!(
            "{}: adjacency must be {d}x{d} to match the data",
            path.display()
        )));
    }
    let mut adjacency = Array2::from_elem((d, d), false);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            adjacency[[i, j]] = v;
        }
    }
    Ok(adjacency)
}

#[derive(Serialize)]
struct ResolvedGgm<'a> {
    data: &'a Path,
    standardize: bool,
    truncation: &'a Option<TruncationRegion>,
    path: &'a RegPathConfig,
    auto_threshold: bool,
    truth: Option<&'a Path>,
    full_data: Option<&'a Path>,
    densities: &'a [f64],
}

pub fn run(args: GgmArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let file = FileConfig::load(args.config.as_deref())?;
    let sec = file.ggm.clone().unwrap_or_default();
    let data_path = args
        .data
        .or(file.data.clone())
        .ok_or_else(|| CliError::config("ggm needs --data (or a `data` config key)"))?;
    let mut data = load_csv(&data_path)?;
    let d = data.dim;
    let standardize_on = args.standardize || sec.standardize.unwrap_or(false);
    if standardize_on {
        standardize(&mut data);
    }
    let seed = args.seed.or(file.seed).unwrap_or(0);

    let estimator = match args
        .method
        .as_deref()
        .or(sec.estimator.as_deref())
        .unwrap_or("zeroed")
    {
        "iw" => PathEstimator::Iw {
            r: args.r.or(sec.r).unwrap_or(10),
            proposal_variance: args.proposal_var.or(sec.proposal_var).unwrap_or(16.0),
        },
        "var" => PathEstimator::Var {
            r: args.r.or(sec.r).unwrap_or(5),
            hidden: args.hidden.or(sec.hidden).unwrap_or(64),
            inner_steps: args.inner_steps.or(sec.inner_steps).unwrap_or(5),
            lr_phi: args.lr_phi.or(sec.lr_phi).unwrap_or(0.01),
            loss: match args.loss.as_deref().or(sec.loss.as_deref()) {
                Some(name) => parse_loss(name)?,
                None => margscore::variational::VarLossKind::Fisher,
            },
        },
        "zeroed" => PathEstimator::Zeroed {
            factor_two: sec.factor_two.unwrap_or(true),
        },
        other => {
            return Err(CliError::config(format!(
                "unknown estimator {other:?}; use iw | var | zeroed"
            )))
        }
    };
    let cfg = RegPathConfig {
        lambda1_grid: RegPathConfig::log_grid(
            args.lambda1_max.or(sec.lambda1_max).unwrap_or(10.0),
            args.lambda1_min.or(sec.lambda1_min).unwrap_or(1e-4),
            args.lambda1_count.or(sec.lambda1_count).unwrap_or(100),
        ),
        warmup_iters: args.warmup_iters.or(sec.warmup_iters).unwrap_or(100),
        iters_per_level: args.iters_per_level.or(sec.iters_per_level).unwrap_or(10),
        learning_rate: args.lr.or(sec.lr).unwrap_or(0.05),
        edge_threshold: args.edge_threshold.or(sec.edge_threshold).unwrap_or(0.002),
        estimator,
        batch_size: args.batch.or(sec.batch).unwrap_or(100),
        seed,
    };
    cfg.validate()?;
    let truncation = resolve_truncation(args.truncation.as_deref(), &file)?;
    let out = resolve_out(args.out, file.out.clone())?;

    let trunc_arg = truncation
        .as_ref()
        .map(|region| (region, WeightFunction::default()));
    let mut result = run_reg_path(&data, &cfg, trunc_arg)?;

    let auto_on = args.auto_threshold || sec.auto_threshold.unwrap_or(false);
    let mut chosen_threshold = None;
    let mut jumpiness_level = None;
    if auto_on {
        // Smoothness level per dimension regime: stricter in high dimension,
        // where a single edge moves the density less.
        let level = if d >= 50 { 0.01 } else { 0.05 };
        let snapshots = result.snapshots.clone();
        let threshold = auto_threshold(
            |t| {
                snapshots
                    .iter()
                    .map(|s| edge_density(&adjacency_from_precision(&s.prec, t)))
                    .collect()
            },
            level,
            1e-6,
            1.0,
        )?;
        for snap in result.snapshots.iter_mut() {
            snap.adjacency = adjacency_from_precision(&snap.prec, threshold);
            snap.edge_density = edge_density(&snap.adjacency);
        }
        chosen_threshold = Some(threshold);
        jumpiness_level = Some(level);
    }

    result.write_csv(out.join("path.csv"))?;
    let adj_dir = out.join("adjacencies");
    std::fs::create_dir_all(&adj_dir)?;
    for (k, snap) in result.snapshots.iter().enumerate() {
        write_adjacency_csv(&snap.adjacency, adj_dir.join(format!("level_{k:03}.csv")))?;
    }

    let truth_path: Option<PathBuf> = args.truth.or(sec.truth.clone());
    let full_path: Option<PathBuf> = args.full_data.or(sec.full_data.clone());
    let densities: Vec<f64> = sec
        .densities
        .clone()
        .unwrap_or_else(|| DEFAULT_DENSITIES.to_vec());

    let mut auc_report = serde_json::Map::new();
    if let Some(threshold) = chosen_threshold {
        auc_report.insert("auto_threshold".into(), threshold.into());
        auc_report.insert("jumpiness_level".into(), jumpiness_level.into());
    }
    if let Some(truth_path) = &truth_path {
        let truth = load_adjacency_csv(truth_path, d)?;
        auc_report.insert("auc".into(), roc_auc(&result, &truth)?.into());
    } else if let Some(full_path) = &full_path {
        let full = load_csv(full_path)?;
        let truths = ground_truth_path(&full, &densities, &cfg)?;
        let mut aucs = Vec::with_capacity(truths.len());
        for truth in &truths {
            aucs.push(roc_auc(&result, truth)?);
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        auc_report.insert("densities".into(), json!(densities));
        auc_report.insert("aucs".into(), json!(aucs));
        auc_report.insert("mean_auc".into(), mean.into());
    }
    if !auc_report.is_empty() {
        let auc_file = std::fs::File::create(out.join("auc.json"))?;
        serde_json::to_writer_pretty(
            std::io::BufWriter::new(auc_file),
            &serde_json::Value::Object(auc_report.clone()),
        )?;
    }

    let resolved = ResolvedGgm {
        data: &data_path,
        standardize: standardize_on,
        truncation: &truncation,
        path: &cfg,
        auto_threshold: auto_on,
        truth: truth_path.as_deref(),
        full_data: full_path.as_deref(),
        densities: &densities,
    };
    let final_density = result.snapshots.last().map(|s| s.edge_density);
    let details = json!({
        "levels": result.snapshots.len(),
        "final_edge_density": final_density,
        "auc": auc_report,
    });
    write_manifest(
        &out,
        "ggm",
        seed,
        &resolved,
        details,
        start.elapsed().as_secs_f64(),
    )?;
    println!(
        "path over {} levels, final edge density {:.3}; wrote {}",
        result.snapshots.len(),
        final_density.unwrap_or(f64::NAN),
        out.join("path.csv").display()
    );
    Ok(())
}
