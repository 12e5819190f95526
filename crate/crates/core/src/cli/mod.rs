//! Command-line front end.
//!
//! Metric subcommands print one JSON object to stdout. Every file a command
//! writes lands inside its `--out-dir`, together with a run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::fmt_f64;
use crate::error::{Error, Result};
use crate::experiments::{
    cosreg_mean_experiment, id_vs_lambda, lambda_sweep, layer_experiment, stability_sweep, zeta_sweep,
    ExperimentResult, LayerVariant, StabilityConfig, TrainingGrid,
};
use crate::grad::{finite_diff_grad, grad_isoscore_star, relative_error};
use crate::io::{read_labeled_csv, read_matrix, write_labeled_csv};
use crate::metrics::{avg_random_cosine, isoscore, isoscore_star, partition_isotropy};
use crate::nn::{make_blobs, train, BlobsSpec, LabeledData, TrainConfig, TrainReport};
use crate::report::{confined_path, emit_files, emit_iso_report, emit_result, verify_manifest};
use crate::tensor::{covariance, CovMatrix, Estimator, PointCloud};
use crate::twonn::{twonn_id, DEFAULT_DISCARD_FRACTION};

#[derive(Debug, Parser)]
#[command(
    name = "isoscope",
    version,
    about = "Isotropy scores, gradients and experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// IsoScore of a point cloud (PCA-based, no shrinkage).
    Isoscore(IsoscoreArgs),
    /// IsoScore* with covariance shrinkage toward Σ_S.
    Isostar(IsostarArgs),
    /// Average cosine similarity of random point pairs.
    Cosine(CosineArgs),
    /// Partition-function isotropy.
    Partition(InputArgs),
    /// TwoNN intrinsic dimension.
    Twonn(TwonnArgs),
    /// Compares the analytic IsoScore* gradient with central differences.
    GradCheck(GradCheckArgs),
    /// Writes a labeled Gaussian-blobs dataset.
    MakeBlobs(MakeBlobsArgs),
    /// Trains an MLP and records per-epoch metrics.
    Train(TrainArgs),
    /// Runs a seeded experiment grid.
    Experiment(ExperimentArgs),
    /// Re-hashes the files listed in a run manifest.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Point cloud as headerless CSV or ISM1 binary.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Directory for the report CSV and manifest.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Base name of the written files.
    #[arg(long, default_value = "report", value_parser = parse_name)]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct IsoscoreArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ShrinkArgs {
    /// Shrinkage weight ζ in [0, 1].
    #[arg(long, value_parser = parse_unit_interval)]
    pub zeta: f64,
    /// Σ_S as a d×d matrix file.
    #[arg(long, conflicts_with = "reference")]
    pub sigma_s: Option<PathBuf>,
    /// Point cloud whose covariance is used as Σ_S.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IsostarArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub shrink: ShrinkArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct CosineArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Number of sampled pairs.
    #[arg(long, default_value_t = 10_000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TwonnArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Fraction of the largest neighbor-distance ratios to censor.
    #[arg(long, default_value_t = DEFAULT_DISCARD_FRACTION, value_parser = parse_discard)]
    pub discard: f64,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub shrink: ShrinkArgs,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct MakeBlobsArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "blobs", value_parser = parse_name)]
    pub name: String,
    /// JSON blobs spec; the flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labeled CSV (last column is the class); blobs are generated when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// JSON blobs spec used when `--data` is absent.
    #[arg(long, conflicts_with = "data")]
    pub blobs: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "train", value_parser = parse_name)]
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    /// IsoScore* of small batches against a reference covariance.
    Stability,
    /// Validation accuracy across shrinkage ζ under I-STAR.
    Zeta,
    /// Isotropy and accuracy across the I-STAR λ grid.
    Lambda,
    /// Final-layer mean activations under CosReg.
    Cosreg,
    /// Per-layer IsoScore* for global and single-layer I-STAR.
    Layers,
    /// TwoNN intrinsic dimension across λ.
    Id,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    pub kind: ExperimentKind,
    /// JSON config. Stability takes a stability config; the training kinds
    /// take `{"grid": …, "values": [...]}`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in stability preset when no config is given.
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: Scale,
    /// Overrides the seed list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn parse_unit_interval(text: &str) -> std::result::Result<f64, String> {
    let v: f64 = text.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_discard(text: &str) -> std::result::Result<f64, String> {
    let v: f64 = text.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1)"))
    }
}

fn parse_name(text: &str) -> std::result::Result<String, String> {
    confined_path(Path::new("."), text)
        .map(|_| text.to_string())
        .map_err(|e| e.to_string())
}

/// Parses `argv` (program name first) into a command.
pub fn parse_cli<I, T>(argv: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

/// Training-grid experiment config file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GridFile {
    #[serde(default)]
    pub grid: TrainingGrid,
    /// Grid values as text: ζ or λ decimals, `none` for the baseline, or
    /// layer variants (`none`, `global`, `single:<l>`).
    #[serde(default)]
    pub values: Option<Vec<String>>,
}

fn require_file(path: &Path) -> Result<()> {
    if path.exists() && !path.is_dir() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    require_file(path)?;
    serde_json::from_str(&fs::read_to_string(path)?)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn load_points(path: &Path) -> Result<PointCloud> {
    require_file(path)?;
    read_matrix(path)
}

fn load_sigma_s(args: &ShrinkArgs, d: usize) -> Result<CovMatrix> {
    if let Some(path) = &args.sigma_s {
        let m = load_points(path)?.into_inner();
        return CovMatrix::new(m, 1, Estimator::Unbiased);
    }
    if let Some(path) = &args.reference {
        return covariance(&load_points(path)?, Estimator::Unbiased);
    }
    if args.zeta > 0.0 {
        return Err(Error::InvalidParameter(
            "ζ > 0 needs --sigma-s or --reference".into(),
        ));
    }
    Ok(CovMatrix::zeros(d))
}

fn check_inputs(cli: &Cli) -> Result<()> {
    let shrink_files = |s: &ShrinkArgs| -> Result<()> {
        for p in s.sigma_s.iter().chain(&s.reference) {
            require_file(p)?;
        }
        if s.zeta > 0.0 && s.sigma_s.is_none() && s.reference.is_none() {
            return Err(Error::InvalidParameter(
                "ζ > 0 needs --sigma-s or --reference".into(),
            ));
        }
        Ok(())
    };
    match &cli.command {
        Command::Isoscore(a) => require_file(&a.input.input),
        Command::Isostar(a) => require_file(&a.input.input).and(shrink_files(&a.shrink)),
        Command::Cosine(a) => require_file(&a.input.input),
        Command::Partition(a) => require_file(&a.input),
        Command::Twonn(a) => require_file(&a.input.input),
        Command::GradCheck(a) => {
            require_file(&a.input.input)?;
            shrink_files(&a.shrink)?;
            if !(a.step > 0.0 && a.step.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "step must be positive, got {}",
                    a.step
                )));
            }
            Ok(())
        }
        Command::MakeBlobs(a) => a.config.iter().try_for_each(|p| require_file(p)),
        Command::Train(a) => a
            .config
            .iter()
            .chain(&a.data)
            .chain(&a.blobs)
            .try_for_each(|p| require_file(p)),
        Command::Experiment(a) => a.config.iter().try_for_each(|p| require_file(p)),
        Command::Verify(a) => require_file(&a.manifest),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

fn parse_values<T>(values: &[String], parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    values.iter().map(|v| parse(v)).collect()
}

fn parse_f64(text: &str) -> Result<f64> {
    text.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid grid value {text:?}")))
}

fn parse_optional_lambda(text: &str) -> Result<Option<f64>> {
    if text.trim() == "none" {
        Ok(None)
    } else {
        parse_f64(text).map(Some)
    }
}

fn run_experiment(args: &ExperimentArgs) -> Result<ExperimentResult> {
    if args.kind == ExperimentKind::Stability {
        let mut config = match &args.config {
            Some(path) => read_json::<StabilityConfig>(path)?,
            None if args.scale == Scale::Full => StabilityConfig::full(),
            None => StabilityConfig::desk(),
        };
        if let Some(seeds) = &args.seeds {
            config.seeds = seeds.clone();
        }
        return stability_sweep(&config);
    }
    let mut file = match &args.config {
        Some(path) => read_json::<GridFile>(path)?,
        None => GridFile::default(),
    };
    if let Some(seeds) = &args.seeds {
        file.grid.seeds = seeds.clone();
    }
    let texts = |defaults: &[&str]| -> Vec<String> {
        file.values
            .clone()
            .unwrap_or_else(|| defaults.iter().map(|s| s.to_string()).collect())
    };
    let grid = &file.grid;
    match args.kind {
        ExperimentKind::Zeta => {
            let zetas = parse_values(&texts(&["0", "0.2", "0.4", "0.6", "0.8", "1"]), parse_f64)?;
            zeta_sweep(grid, &zetas)
        }
        ExperimentKind::Lambda => {
            let lambdas = parse_values(&texts(&["-5", "-3", "-1", "0.5", "1", "3", "5"]), parse_f64)?;
            lambda_sweep(grid, &lambdas)
        }
        ExperimentKind::Cosreg => {
            let lambdas = parse_values(&texts(&["-1", "1", "none"]), parse_optional_lambda)?;
            cosreg_mean_experiment(grid, &lambdas)
        }
        ExperimentKind::Id => {
            let lambdas = parse_values(&texts(&["-5", "-3", "3", "5", "none"]), parse_optional_lambda)?;
            id_vs_lambda(grid, &lambdas)
        }
        ExperimentKind::Layers => {
            let variants = parse_values(&texts(&["none", "global", "single:0", "single:1"]), |t| {
                t.parse::<LayerVariant>()
                    .map_err(|e| Error::InvalidConfig(e.to_string()))
            })?;
            layer_experiment(grid, &variants)
        }
        ExperimentKind::Stability => unreachable!("handled above"),
    }
}

fn epochs_csv(report: &TrainReport) -> String {
    let layers = report.epochs.first().map_or(0, |e| e.layer_isoscores.len());
    let mut header = vec![
        "epoch".to_string(),
        "train_loss".into(),
        "val_accuracy".into(),
        "isoscore_star".into(),
        "twonn_id".into(),
        "mean_norm".into(),
    ];
    header.extend((0..layers).map(|l| format!("layer_{l}_isoscore_star")));
    let mut out = header.join(",") + "\n";
    for e in &report.epochs {
        let mut row = vec![
            e.epoch.to_string(),
            fmt_f64(e.train_loss),
            fmt_f64(e.val_accuracy),
            fmt_f64(e.isoscore),
            fmt_f64(e.twonn_id),
            fmt_f64(e.mean_norm),
        ];
        row.extend(e.layer_isoscores.iter().map(|&v| fmt_f64(v)));
        out += &(row.join(",") + "\n");
    }
    out
}

/// Executes a parsed command.
pub fn run(cli: &Cli) -> Result<()> {
    check_inputs(cli)?;
    match &cli.command {
        Command::Isoscore(a) => {
            let report = isoscore(&load_points(&a.input.input)?)?;
            if let Some(dir) = &a.out.out_dir {
                let config = json!({"command": "isoscore", "input": a.input.input.display().to_string()});
                emit_iso_report(&report, &a.out.name, config, dir)?;
            }
            print_json(&json!({"score": report.score, "defect": report.defect, "phi": report.phi}));
        }
        Command::Isostar(a) => {
            let x = load_points(&a.input.input)?;
            let sigma_s = load_sigma_s(&a.shrink, x.dim())?;
            let report = isoscore_star(&x, a.shrink.zeta, &sigma_s)?;
            if let Some(dir) = &a.out.out_dir {
                let config = json!({
                    "command": "isostar",
                    "input": a.input.input.display().to_string(),
                    "zeta": fmt_f64(a.shrink.zeta),
                });
                emit_iso_report(&report, &a.out.name, config, dir)?;
            }
            print_json(&json!({
                "score": report.score,
                "defect": report.defect,
                "phi": report.phi,
                "zeta": report.zeta,
            }));
        }
        Command::Cosine(a) => {
            let sample = avg_random_cosine(&load_points(&a.input.input)?, a.pairs, a.seed)?;
            print_json(&serde_json::to_value(sample)?);
        }
        Command::Partition(a) => {
            let sample = partition_isotropy(&load_points(&a.input)?)?;
            print_json(&serde_json::to_value(sample)?);
        }
        Command::Twonn(a) => {
            let estimate = twonn_id(&load_points(&a.input.input)?, a.discard)?;
            print_json(&json!({
                "id": estimate.id_value,
                "n_used": estimate.n_used,
                "discard_fraction": estimate.discard_fraction,
            }));
        }
        Command::GradCheck(a) => {
            let x = load_points(&a.input.input)?;
            let sigma_s = load_sigma_s(&a.shrink, x.dim())?;
            let analytic = grad_isoscore_star(&x, a.shrink.zeta, &sigma_s)?;
            let numeric = finite_diff_grad(&x, a.shrink.zeta, &sigma_s, a.step)?;
            print_json(&json!({
                "max_relative_error": relative_error(&analytic, &numeric),
                "analytic_max_abs": analytic.max_abs(),
                "step": a.step,
            }));
        }
        Command::MakeBlobs(a) => {
            let mut spec = match &a.config {
                Some(path) => read_json::<BlobsSpec>(path)?,
                None => BlobsSpec::default(),
            };
            spec.classes = a.classes.unwrap_or(spec.classes);
            spec.dim = a.dim.unwrap_or(spec.dim);
            spec.per_class = a.per_class.unwrap_or(spec.per_class);
            spec.spread = a.spread.unwrap_or(spec.spread);
            spec.seed = a.seed.unwrap_or(spec.seed);
            let data = make_blobs(&spec)?;
            fs::create_dir_all(&a.out_dir)?;
            let file = format!("{}.csv", a.name);
            write_labeled_csv(&confined_path(&a.out_dir, &file)?, &data)?;
            let text = fs::read_to_string(a.out_dir.join(&file))?;
            emit_files(
                &a.name,
                &[(file.clone(), text)],
                serde_json::to_value(&spec)?,
                vec![spec.seed.to_string()],
                &a.out_dir,
            )?;
            print_json(&json!({"points": data.len(), "file": file}));
        }
        Command::Train(a) => {
            let mut config = match &a.config {
                Some(path) => read_json::<TrainConfig>(path)?,
                None => TrainConfig::default(),
            };
            config.seed = a.seed.unwrap_or(config.seed);
            config.validate()?;
            let (data, source): (LabeledData, serde_json::Value) = match (&a.data, &a.blobs) {
                (Some(path), _) => (read_labeled_csv(path)?, json!(path.display().to_string())),
                (None, blobs) => {
                    let mut spec = match blobs {
                        Some(path) => read_json::<BlobsSpec>(path)?,
                        None => BlobsSpec::default(),
                    };
                    if blobs.is_none() {
                        spec.seed = config.seed;
                    }
                    let value = serde_json::to_value(&spec)?;
                    (make_blobs(&spec)?, value)
                }
            };
            let report = train(&config, &data)?;
            let artifacts = vec![
                (format!("{}_epochs.csv", a.name), epochs_csv(&report)),
                (
                    format!("{}_report.json", a.name),
                    serde_json::to_string_pretty(&report)? + "\n",
                ),
            ];
            let run_config = json!({"train": config, "data": source});
            emit_files(
                &a.name,
                &artifacts,
                run_config,
                vec![config.seed.to_string()],
                &a.out_dir,
            )?;
            let last = report.last();
            print_json(&json!({
                "val_accuracy": last.val_accuracy,
                "isoscore_star": last.isoscore,
                "twonn_id": last.twonn_id,
                "mean_norm": last.mean_norm,
            }));
        }
        Command::Experiment(a) => {
            let result = run_experiment(a)?;
            let manifest = emit_result(&result, &a.out_dir)?;
            print_json(&json!({
                "experiment": result.experiment_id,
                "cells": result.cells.len(),
                "files": manifest.files.iter().map(|f| &f.path).collect::<Vec<_>>(),
                "notes": result.notes,
            }));
        }
        Command::Verify(a) => {
            let manifest = verify_manifest(&a.manifest)?;
            print_json(&json!({"verified": manifest.files.len(), "name": manifest.name}));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isostar_flags_parse() {
        let cli = parse_cli([
            "isoscope",
            "isostar",
            "--input",
            "x.csv",
            "--zeta",
            "0.2",
            "--sigma-s",
            "s.bin",
        ])
        .unwrap();
        match cli.command {
            Command::Isostar(a) => {
                assert_eq!(a.shrink.zeta, 0.2);
                assert_eq!(a.shrink.sigma_s, Some(PathBuf::from("s.bin")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_range_zeta_is_a_usage_error() {
        let err = parse_cli(["isoscope", "isostar", "--input", "x.csv", "--zeta", "1.5"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = parse_cli(["isoscope", "twonn", "--input", "x.csv", "--bogus"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert_eq!(parse_cli(["isoscope", "twonn"]).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn twonn_discard_parses() {
        let cli = parse_cli(["isoscope", "twonn", "--input", "x.csv", "--discard", "0.1"]).unwrap();
        assert!(matches!(cli.command, Command::Twonn(TwonnArgs { discard, .. }) if discard == 0.1));
        assert!(parse_cli(["isoscope", "twonn", "--input", "x.csv", "--discard", "1"]).is_err());
    }

    #[test]
    fn names_cannot_escape_out_dir() {
        assert!(parse_cli(["isoscope", "isoscore", "--input", "x.csv", "--name", "../x"]).is_err());
        assert!(parse_cli([
            "isoscope",
            "experiment",
            "zeta",
            "--out-dir",
            "o",
            "--seeds",
            "1,2"
        ])
        .is_ok());
    }

    #[test]
    fn missing_input_is_usage_error_before_work() {
        let cli = parse_cli(["isoscope", "isoscore", "--input", "/nonexistent/x.csv"]).unwrap();
        assert_eq!(run(&cli).unwrap_err().exit_code(), 2);
    }
}
