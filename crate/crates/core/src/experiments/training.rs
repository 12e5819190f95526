use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::svg::{ChartKind, Figure, Series};
use super::{run_grid, ExperimentResult};
use crate::config::{dec_vec, fmt_f64};
use crate::error::{Error, Result};
use crate::nn::{
    layer_isoscores, make_blobs, train, BlobsSpec, LayerScope, MlpModel, Regularizer, TrainConfig,
    TrainReport,
};
use crate::tensor::{CovMatrix, PointCloud};

/// A training template, the blobs task and the seed list. Each seed draws its
/// own blobs dataset and initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingGrid {
    pub template: TrainConfig,
    pub blobs: BlobsSpec,
    #[serde(with = "dec_vec")]
    pub seeds: Vec<u64>,
}

impl Default for TrainingGrid {
    /// 4 classes × 1,000 points in d = 16, a 32-32 tanh MLP, 20 epochs, 5 seeds,
    /// λ = 1 wherever an experiment does not set λ itself.
    fn default() -> Self {
        Self {
            template: TrainConfig {
                lambda: 1.0,
                shrinkage_sample_size: 2_000,
                ..TrainConfig::default()
            },
            blobs: BlobsSpec::default(),
            seeds: (0..5).collect(),
        }
    }
}

impl TrainingGrid {
    fn config_for(&self, seed: u64, setup: impl FnOnce(&mut TrainConfig)) -> TrainConfig {
        let mut config = self.template.clone();
        config.seed = seed;
        setup(&mut config);
        config
    }

    fn run(&self, config: &TrainConfig) -> Result<TrainReport> {
        let data = make_blobs(&BlobsSpec {
            seed: config.seed,
            ..self.blobs.clone()
        })?;
        train(config, &data)
    }

    /// Trains every (setting, seed) pair; `out[i][s]` is setting `i`, seed `s`.
    fn run_all<P: Sync>(
        &self,
        settings: &[P],
        setup: impl Fn(&P, &mut TrainConfig) + Sync + Send,
    ) -> Result<Vec<Vec<TrainReport>>> {
        let jobs: Vec<(usize, u64)> = (0..settings.len())
            .flat_map(|i| self.seeds.iter().map(move |&s| (i, s)))
            .collect();
        for &(i, s) in &jobs {
            self.config_for(s, |c| setup(&settings[i], c)).validate()?;
        }
        let reports = run_grid(&jobs, |&(i, s)| {
            self.run(&self.config_for(s, |c| setup(&settings[i], c)))
        })?;
        let mut out: Vec<Vec<TrainReport>> = Vec::with_capacity(settings.len());
        let mut it = reports.into_iter();
        for _ in settings {
            out.push(it.by_ref().take(self.seeds.len()).collect());
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct Hashed<'a, V: Serialize> {
    experiment: &'a str,
    grid: &'a TrainingGrid,
    values: V,
}

fn lambda_label(lambda: Option<f64>) -> String {
    lambda.map_or_else(|| "none".to_string(), fmt_f64)
}

fn lambda_labels(lambdas: &[Option<f64>]) -> Vec<String> {
    lambdas.iter().map(|l| lambda_label(*l)).collect()
}

fn require_seeds(grid: &TrainingGrid) -> Result<()> {
    if grid.seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "a training grid needs at least one seed".into(),
        ));
    }
    Ok(())
}

fn require_values<T>(values: &[T], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidConfig(format!("{what} grid is empty")));
    }
    Ok(())
}

/// Validation accuracy and IsoScore* per ζ under I-STAR with the template's
/// λ. The notes `best_zeta` and `best_interior_zeta` hold the ζ with the
/// highest mean accuracy over the whole grid and over ζ ∈ (0, 1).
pub fn zeta_sweep(grid: &TrainingGrid, zetas: &[f64]) -> Result<ExperimentResult> {
    require_seeds(grid)?;
    require_values(zetas, "zeta")?;
    let reports = grid.run_all(zetas, |&zeta, c| {
        c.regularizer = Regularizer::IStar;
        c.zeta = zeta;
    })?;
    let mut result = ExperimentResult::new(
        "zeta_sweep",
        &["zeta"],
        vec!["val_accuracy".into(), "isoscore_star".into()],
        &grid.seeds,
        &Hashed {
            experiment: "zeta_sweep",
            grid,
            values: zetas.iter().map(|z| fmt_f64(*z)).collect::<Vec<_>>(),
        },
    )?;
    let mut line = Series::new(format!("λ = {}", fmt_f64(grid.template.lambda)));
    for (&zeta, runs) in zetas.iter().zip(&reports) {
        let values = runs
            .iter()
            .map(|r| vec![r.last().val_accuracy, r.last().isoscore])
            .collect();
        result.push_cell(vec![fmt_f64(zeta)], values)?;
        line.points
            .push((zeta, result.cells.last().expect("pushed").stats[0].mean));
    }
    let best = result.cells.iter().enumerate().fold(0, |best, (i, c)| {
        if c.stats[0].mean > result.cells[best].stats[0].mean {
            i
        } else {
            best
        }
    });
    result
        .notes
        .insert("best_zeta".into(), result.cells[best].params[0].clone());
    let interior = zetas
        .iter()
        .zip(&result.cells)
        .filter(|(z, _)| **z > 0.0 && **z < 1.0)
        .map(|(_, c)| c)
        .fold(None::<&super::GridCell>, |best, c| match best {
            Some(b) if b.stats[0].mean >= c.stats[0].mean => Some(b),
            _ => Some(c),
        });
    if let Some(cell) = interior {
        result
            .notes
            .insert("best_interior_zeta".into(), cell.params[0].clone());
    }
    result.figure = Some(Figure {
        title: "Validation accuracy by shrinkage ζ".into(),
        x_label: "ζ".into(),
        y_label: "validation accuracy".into(),
        kind: ChartKind::Line,
        series: vec![line],
    });
    Ok(result)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::TooFewPoints { got: x.len(), min: 2 });
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::InvalidParameter(
            "rank correlation of a constant sequence".into(),
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Final validation accuracy and IsoScore*(X̃) per λ under I-STAR. Notes hold
/// the Spearman correlation between λ and mean IsoScore* (`spearman`) and
/// over all (λ, seed) runs (`spearman_runs`).
pub fn lambda_sweep(grid: &TrainingGrid, lambdas: &[f64]) -> Result<ExperimentResult> {
    require_seeds(grid)?;
    require_values(lambdas, "lambda")?;
    let reports = grid.run_all(lambdas, |&lambda, c| {
        c.regularizer = Regularizer::IStar;
        c.lambda = lambda;
    })?;
    let mut result = ExperimentResult::new(
        "lambda_sweep",
        &["lambda"],
        vec!["val_accuracy".into(), "isoscore_star".into()],
        &grid.seeds,
        &Hashed {
            experiment: "lambda_sweep",
            grid,
            values: lambdas.iter().map(|l| fmt_f64(*l)).collect::<Vec<_>>(),
        },
    )?;
    let mut series = Vec::new();
    let (mut run_lambda, mut run_iso) = (Vec::new(), Vec::new());
    for (&lambda, runs) in lambdas.iter().zip(&reports) {
        let values: Vec<Vec<f64>> = runs
            .iter()
            .map(|r| vec![r.last().val_accuracy, r.last().isoscore])
            .collect();
        let mut s = Series::new(format!("λ = {}", fmt_f64(lambda)));
        for v in &values {
            s.points.push((v[1], v[0]));
            run_lambda.push(lambda);
            run_iso.push(v[1]);
        }
        series.push(s);
        result.push_cell(vec![fmt_f64(lambda)], values)?;
    }
    if lambdas.len() >= 2 {
        let means: Vec<f64> = result.cells.iter().map(|c| c.stats[1].mean).collect();
        if let Ok(rho) = spearman(lambdas, &means) {
            result.notes.insert("spearman".into(), fmt_f64(rho));
        }
        if let Ok(rho) = spearman(&run_lambda, &run_iso) {
            result.notes.insert("spearman_runs".into(), fmt_f64(rho));
        }
    }
    result.figure = Some(Figure {
        title: "Isotropy versus validation accuracy".into(),
        x_label: "IsoScore*".into(),
        y_label: "validation accuracy".into(),
        kind: ChartKind::Scatter,
        series,
    });
    Ok(result)
}

/// Final-layer mean activation per λ under CosReg (`None` is the
/// unregularized baseline). Metrics: mean-vector norm, final-layer
/// IsoScore*, validation accuracy and each coordinate of the mean.
pub fn cosreg_mean_experiment(grid: &TrainingGrid, lambdas: &[Option<f64>]) -> Result<ExperimentResult> {
    require_seeds(grid)?;
    require_values(lambdas, "lambda")?;
    let reports = grid.run_all(lambdas, |lambda, c| match lambda {
        Some(l) => {
            c.regularizer = Regularizer::CosReg;
            c.lambda = *l;
        }
        None => {
            c.regularizer = Regularizer::None;
            c.lambda = 0.0;
        }
    })?;
    let width = *grid.template.hidden.last().expect("validated non-empty");
    let mut metrics = vec![
        "mean_norm".into(),
        "final_isoscore_star".into(),
        "val_accuracy".into(),
    ];
    metrics.extend((0..width).map(|k| format!("mean_{k}")));
    let labels = lambda_labels(lambdas);
    let mut result = ExperimentResult::new(
        "cosreg_mean",
        &["lambda"],
        metrics,
        &grid.seeds,
        &Hashed {
            experiment: "cosreg_mean",
            grid,
            values: &labels,
        },
    )?;
    let mut series = Vec::new();
    for (label, runs) in labels.iter().zip(&reports) {
        let values: Vec<Vec<f64>> = runs
            .iter()
            .map(|r| {
                let last = r.last();
                let mut v = vec![
                    last.mean_norm,
                    *last.layer_isoscores.last().expect("hidden layers"),
                    last.val_accuracy,
                ];
                v.extend(&last.final_layer_mean);
                v
            })
            .collect();
        result.push_cell(vec![label.clone()], values)?;
        let stats = &result.cells.last().expect("pushed").stats;
        let mut s = Series::new(format!("λ = {label}"));
        s.points = (0..width).map(|k| (k as f64, stats[3 + k].mean)).collect();
        series.push(s);
    }
    result.figure = Some(Figure {
        title: "Final-layer mean activation under CosReg".into(),
        x_label: "dimension".into(),
        y_label: "mean activation".into(),
        kind: ChartKind::Line,
        series,
    });
    Ok(result)
}

/// TwoNN intrinsic dimension of final-layer validation activations per λ
/// under I-STAR (`None` is the unregularized baseline).
pub fn id_vs_lambda(grid: &TrainingGrid, lambdas: &[Option<f64>]) -> Result<ExperimentResult> {
    require_seeds(grid)?;
    require_values(lambdas, "lambda")?;
    let reports = grid.run_all(lambdas, |lambda, c| match lambda {
        Some(l) => {
            c.regularizer = Regularizer::IStar;
            c.lambda = *l;
        }
        None => {
            c.regularizer = Regularizer::None;
            c.lambda = 0.0;
        }
    })?;
    let labels = lambda_labels(lambdas);
    let mut result = ExperimentResult::new(
        "id_vs_lambda",
        &["lambda"],
        vec!["twonn_id".into(), "isoscore_star".into(), "val_accuracy".into()],
        &grid.seeds,
        &Hashed {
            experiment: "id_vs_lambda",
            grid,
            values: &labels,
        },
    )?;
    let mut regularized = Series::new("I-STAR".into());
    let mut baseline = Series::new("baseline (λ = 0)".into());
    for ((label, lambda), runs) in labels.iter().zip(lambdas).zip(&reports) {
        let values: Vec<Vec<f64>> = runs
            .iter()
            .map(|r| vec![r.last().twonn_id, r.last().isoscore, r.last().val_accuracy])
            .collect();
        for v in &values {
            match lambda {
                Some(l) => regularized.points.push((*l, v[0])),
                None => baseline.points.push((0.0, v[0])),
            }
        }
        result.push_cell(vec![label.clone()], values)?;
    }
    result.figure = Some(Figure {
        title: "Intrinsic dimension of final-layer activations".into(),
        x_label: "λ".into(),
        y_label: "TwoNN intrinsic dimension".into(),
        kind: ChartKind::Scatter,
        series: vec![regularized, baseline],
    });
    Ok(result)
}

/// Training variant for the per-layer experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerVariant {
    Baseline,
    IStar(LayerScope),
}

impl fmt::Display for LayerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Baseline => f.write_str("none"),
            Self::IStar(scope) => scope.fmt(f),
        }
    }
}

impl FromStr for LayerVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(Self::Baseline),
            other => other.parse().map(Self::IStar).map_err(Error::InvalidParameter),
        }
    }
}

impl Serialize for LayerVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// IsoScore* of every hidden layer's activations on `data`, one Σ_S per layer.
pub fn layer_profile(
    model: &MlpModel,
    data: &PointCloud,
    zeta: f64,
    sigma_s: &[CovMatrix],
) -> Result<Vec<f64>> {
    layer_isoscores(model, data, zeta, sigma_s)
}

/// Per-layer validation IsoScore* (ζ = 0) after training with each variant at
/// the template's λ. Rows are (variant, layer).
pub fn layer_experiment(grid: &TrainingGrid, variants: &[LayerVariant]) -> Result<ExperimentResult> {
    require_seeds(grid)?;
    require_values(variants, "variant")?;
    let reports = grid.run_all(variants, |variant, c| match variant {
        LayerVariant::Baseline => {
            c.regularizer = Regularizer::None;
            c.lambda = 0.0;
        }
        LayerVariant::IStar(scope) => {
            c.regularizer = Regularizer::IStar;
            c.layer_scope = *scope;
        }
    })?;
    let mut result = ExperimentResult::new(
        "layers",
        &["variant", "layer"],
        vec!["isoscore_star".into(), "val_accuracy".into()],
        &grid.seeds,
        &Hashed {
            experiment: "layers",
            grid,
            values: variants,
        },
    )?;
    let mut series = Vec::new();
    for (variant, runs) in variants.iter().zip(&reports) {
        let mut s = Series::new(variant.to_string());
        for layer in 0..grid.template.hidden.len() {
            let values = runs
                .iter()
                .map(|r| vec![r.last().layer_isoscores[layer], r.last().val_accuracy])
                .collect();
            result.push_cell(vec![variant.to_string(), layer.to_string()], values)?;
            s.points
                .push((layer as f64, result.cells.last().expect("pushed").stats[0].mean));
        }
        series.push(s);
    }
    result.figure = Some(Figure {
        title: "Layer-wise IsoScore*".into(),
        x_label: "hidden layer".into(),
        y_label: "IsoScore*".into(),
        kind: ChartKind::Line,
        series,
    });
    Ok(result)
}
