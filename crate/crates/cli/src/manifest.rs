//! Run manifests. Every command writes a `manifest.json` next to its outputs
//! holding the fully resolved configuration (after flag overrides), a content
//! hash of that configuration, the seed, and tool versions — enough to
//! reproduce the run bit for bit. The creation time and wall time are the
//! only fields allowed to differ between identical re-runs.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::errors::CliError;

#[derive(Serialize)]
struct Versions {
    margscore: &'static str,
    cli: &'static str,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'static str,
    config_hash: String,
    seed: u64,
    versions: Versions,
    created_unix: u64,
    wall_time_s: f64,
    config: &'a C,
    details: serde_json::Value,
}

/// Hex-encoded SHA-256 of the configuration's canonical JSON encoding.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String, CliError> {
    let bytes = serde_json::to_vec(config)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("sha256:{:x}", hasher.finalize()))
}

/// Writes `manifest.json` into `out_dir`.
pub fn write_manifest<C: Serialize>(
    out_dir: &Path,
    command: &'static str,
    seed: u64,
    config: &C,
    details: serde_json::Value,
    wall_time_s: f64,
) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        config_hash: config_hash(config)?,
        seed,
        versions: Versions {
            margscore: margscore::VERSION,
            cli: env!("CARGO_PKG_VERSION"),
        },
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        wall_time_s,
        config,
        details,
    };
    let file = std::fs::File::create(out_dir.join("manifest.json"))?;
    let mut writer = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, &manifest)?;
    use std::io::Write;
    writer.write_all(b"\n")?;
    Ok(())
}
