//! `gen`: draw a synthetic dataset with known ground truth.

use std::time::Instant;

use margscore::data::write_full_csv;
use margscore::ggm::{adjacency_from_precision, edge_density, write_adjacency_csv};
use margscore::synth::{gen_ica_theta, DesignKind, ExperimentDesign, GroundTruth, MissingSpec};

use crate::commands::{resolve_out, resolve_truncation};
use crate::config::FileConfig;
use crate::errors::CliError;
use crate::manifest::write_manifest;
use crate::GenArgs;

pub fn run(args: GenArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let file = FileConfig::load(args.config.as_deref())?;
    let section = file.design.as_ref();
    let family = args
        .family
        .or_else(|| section.and_then(|s| s.family.clone()))
        .ok_or_else(|| {
            CliError::config(
                "gen needs a family (positional or [design].family): \
                 random-gaussian | star | dense | ica",
            )
        })?;
    let d = args.d.or(section.and_then(|s| s.d)).unwrap_or(10);
    let n = args.n.or(section.and_then(|s| s.n)).unwrap_or(1000);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let truncation = resolve_truncation(args.truncation.as_deref(), &file)?;
    let out = resolve_out(args.out, file.out.clone())?;

    let kind = match family.as_str() {
        "random-gaussian" | "random_gaussian" => DesignKind::RandomGaussian,
        "star" => DesignKind::StarGgm {
            centers: args.centers.or(section.and_then(|s| s.centers)).unwrap_or(1),
        },
        "dense" => DesignKind::DenseGgm {
            edge_prob: args
                .edge_prob
                .or(section.and_then(|s| s.edge_prob))
                .unwrap_or(0.25),
        },
        "ica" => DesignKind::Ica {
            theta_star: gen_ica_theta(d, seed)?,
        },
        other => {
            return Err(CliError::config(format!(
                "unknown family {other:?}; use random-gaussian | star | dense | ica"
            )))
        }
    };
    let is_graph_family =
        matches!(kind, DesignKind::StarGgm { .. } | DesignKind::DenseGgm { .. });
    let design = ExperimentDesign {
        kind,
        d,
        n,
        truncation,
        missingness: MissingSpec::Mcar { p: 0.0 },
        seed,
    };
    design.validate()?;
    let truth = design.ground_truth()?;
    let full = design.sample_full(&truth)?;

    write_full_csv(full.view(), None, out.join("data.csv"))?;
    let truth_file = std::fs::File::create(out.join("truth.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(truth_file), &truth.to_json())?;

    let mut details = serde_json::Map::new();
    details.insert("rows".into(), full.nrows().into());
    if is_graph_family {
        if let GroundTruth::Gaussian(params) = &truth {
            let adjacency = adjacency_from_precision(&params.precision(), 1e-9);
            write_adjacency_csv(&adjacency, out.join("truth_adjacency.csv"))?;
            details.insert("truth_edge_density".into(), edge_density(&adjacency).into());
        }
    }
    write_manifest(
        &out,
        "gen",
        seed,
        &design,
        details.into(),
        start.elapsed().as_secs_f64(),
    )?;
    println!(
        "wrote {} ({} x {})",
        out.join("data.csv").display(),
        full.nrows(),
        d
    );
    Ok(())
}
