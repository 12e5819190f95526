//! Writes results into an output directory together with a run manifest that
//! records the config, seeds, tool version and a SHA-256 per file.

use std::fs;
use std::path::{Component, Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::fmt_f64;
use crate::error::{Error, Result};
use crate::experiments::{config_hash, svg, ExperimentResult};
use crate::io::write_atomic;
use crate::metrics::IsoReport;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seeds: Vec<String>,
    pub created_unix: u64,
    pub files: Vec<ManifestEntry>,
}

/// `out_dir/name`, rejecting names that could leave `out_dir`.
pub fn confined_path(out_dir: &Path, name: &str) -> Result<PathBuf> {
    let mut components = Path::new(name).components();
    match (components.next(), components.next()) {
        (Some(Component::Normal(_)), None) => Ok(out_dir.join(name)),
        _ => Err(Error::InvalidParameter(format!(
            "output name {name:?} must be a plain file name inside the output directory"
        ))),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn write_text(out_dir: &Path, name: &str, text: &str) -> Result<ManifestEntry> {
    let path = confined_path(out_dir, name)?;
    write_atomic(&path, |out| out.write_all(text.as_bytes()))?;
    Ok(ManifestEntry {
        path: name.to_string(),
        sha256: hex::encode(Sha256::digest(text.as_bytes())),
    })
}

fn finish(
    out_dir: &Path,
    name: &str,
    config: serde_json::Value,
    seeds: Vec<String>,
    files: Vec<ManifestEntry>,
) -> Result<RunManifest> {
    let manifest = RunManifest {
        name: name.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config_hash(&config)?,
        config,
        seeds,
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    write_text(out_dir, &format!("{name}.manifest.json"), &text)?;
    Ok(manifest)
}

/// Writes `<id>.csv` (summary), `<id>_runs.csv` (per seed), `<id>.svg` when
/// the result has a figure, `<id>_notes.csv` when it has notes, then the
/// manifest `<id>.manifest.json` last.
pub fn emit_result(result: &ExperimentResult, out_dir: &Path) -> Result<RunManifest> {
    result.validate()?;
    fs::create_dir_all(out_dir)?;
    let id = &result.experiment_id;
    let mut files = vec![
        write_text(out_dir, &format!("{id}.csv"), &result.summary_csv())?,
        write_text(out_dir, &format!("{id}_runs.csv"), &result.runs_csv())?,
    ];
    if !result.notes.is_empty() {
        let mut text = String::from("key,value\n");
        for (k, v) in &result.notes {
            text += &format!("{k},{v}\n");
        }
        files.push(write_text(out_dir, &format!("{id}_notes.csv"), &text)?);
    }
    if let Some(figure) = &result.figure {
        files.push(write_text(out_dir, &format!("{id}.svg"), &svg::render(figure))?);
    }
    let seeds = result.seeds.iter().map(u64::to_string).collect();
    finish(out_dir, id, result.config.clone(), seeds, files)
}

/// `field,value` rows: score, defect, phi, zeta, used_shrinkage, then every
/// raw and normalized eigenvalue.
pub fn iso_report_csv(report: &IsoReport) -> String {
    let mut out = String::from("field,value\n");
    out += &format!("score,{}\n", fmt_f64(report.score));
    out += &format!("defect,{}\n", fmt_f64(report.defect));
    out += &format!("phi,{}\n", fmt_f64(report.phi));
    out += &format!("zeta,{}\n", fmt_f64(report.zeta));
    out += &format!("used_shrinkage,{}\n", report.used_shrinkage);
    for (i, v) in report.raw_spectrum.values().iter().enumerate() {
        out += &format!("raw_spectrum_{i},{}\n", fmt_f64(*v));
    }
    for (i, v) in report.normalized_spectrum.iter().enumerate() {
        out += &format!("normalized_spectrum_{i},{}\n", fmt_f64(*v));
    }
    out
}

/// Writes `<name>.csv` from [`iso_report_csv`] plus a manifest.
pub fn emit_iso_report(
    report: &IsoReport,
    name: &str,
    config: serde_json::Value,
    out_dir: &Path,
) -> Result<RunManifest> {
    fs::create_dir_all(out_dir)?;
    let files = vec![write_text(
        out_dir,
        &format!("{name}.csv"),
        &iso_report_csv(report),
    )?];
    finish(out_dir, name, config, Vec::new(), files)
}

/// Writes arbitrary named text artifacts plus a manifest.
pub fn emit_files(
    name: &str,
    artifacts: &[(String, String)],
    config: serde_json::Value,
    seeds: Vec<String>,
    out_dir: &Path,
) -> Result<RunManifest> {
    fs::create_dir_all(out_dir)?;
    let files = artifacts
        .iter()
        .map(|(file, text)| write_text(out_dir, file, text))
        .collect::<Result<Vec<_>>>()?;
    finish(out_dir, name, config, seeds, files)
}

/// Re-hashes every listed file and the recorded config.
pub fn verify_manifest(manifest_path: &Path) -> Result<RunManifest> {
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;
    let expected = config_hash(&manifest.config)?;
    if expected != manifest.config_hash {
        return Err(Error::ConfigHashMismatch {
            expected,
            got: manifest.config_hash,
        });
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    for entry in &manifest.files {
        let path = confined_path(dir, &entry.path)?;
        if !path.exists() || sha256_file(&path)? != entry.sha256 {
            return Err(Error::HashMismatch { path });
        }
    }
    Ok(manifest)
}
