use serde::{Deserialize, Serialize};

use super::svg::{ChartKind, Figure, Series};
use super::{run_grid, ExperimentResult};
use crate::config::{dec, dec_vec, fmt_f64};
use crate::error::{Error, Result};
use crate::metrics::isoscore_star_cov;
use crate::tensor::{covariance, derive_seed, sample_gaussian_rows, CovAccumulator, CovMatrix, Estimator};

/// Rows drawn per chunk when accumulating the reference covariance.
const CHUNK_ROWS: usize = 4_096;

/// `(10, 6, 4, 4, 1, …, 1)` of length `d`, truncated when `d < 4`.
pub fn default_spectrum(d: usize) -> Vec<f64> {
    let head = [10.0, 6.0, 4.0, 4.0];
    (0..d).map(|i| head.get(i).copied().unwrap_or(1.0)).collect()
}

/// A zero-mean Gaussian population with diagonal covariance `spectrum`. Per
/// seed, rows `[0, reference_size)` form the shrinkage sample S and the
/// batches are disjoint row ranges after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    #[serde(with = "dec_vec")]
    pub spectrum: Vec<f64>,
    #[serde(with = "dec")]
    pub population_size: usize,
    #[serde(with = "dec")]
    pub reference_size: usize,
    #[serde(with = "dec_vec")]
    pub batch_sizes: Vec<usize>,
    #[serde(with = "dec_vec")]
    pub zetas: Vec<f64>,
    #[serde(with = "dec")]
    pub batches_per_seed: usize,
    #[serde(with = "dec_vec")]
    pub seeds: Vec<u64>,
}

impl StabilityConfig {
    /// d = 64 with batch sizes around the dimension.
    pub fn desk() -> Self {
        Self {
            spectrum: default_spectrum(64),
            population_size: 40_000,
            reference_size: 12_000,
            batch_sizes: vec![48, 64, 128, 256, 512],
            zetas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0],
            batches_per_seed: 4,
            seeds: (0..5).collect(),
        }
    }

    /// d = 768, N = 250,000 and |S| = 75,000.
    pub fn full() -> Self {
        Self {
            spectrum: default_spectrum(768),
            population_size: 250_000,
            reference_size: 75_000,
            batch_sizes: vec![64, 128, 256, 512, 700, 1024, 2048],
            zetas: vec![0.0, 0.2, 0.4, 0.6, 0.7, 0.8, 0.9, 1.0],
            batches_per_seed: 1,
            seeds: (0..3).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.spectrum.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.dim() < 2 {
            return fail(format!("spectrum needs ≥ 2 entries, got {}", self.dim()));
        }
        if let Some((index, &value)) = self
            .spectrum
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(Error::NegativeVariance { index, value });
        }
        if self.reference_size < 2 {
            return fail("reference size must be ≥ 2".into());
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.iter().any(|&b| b < 2) {
            return fail(format!("batch sizes must be ≥ 2, got {:?}", self.batch_sizes));
        }
        if self.zetas.is_empty() || self.zetas.iter().any(|z| !(0.0..=1.0).contains(z)) {
            return fail(format!("zetas must lie in [0, 1], got {:?}", self.zetas));
        }
        if self.batches_per_seed == 0 {
            return fail("batches per seed must be ≥ 1".into());
        }
        let needed = self.reference_size + self.batches_per_seed * self.batch_sizes.iter().sum::<usize>();
        if needed > self.population_size {
            return fail(format!(
                "S plus all batches need {needed} disjoint rows but the population has {}",
                self.population_size
            ));
        }
        Ok(())
    }

    /// IsoScore* of the population covariance itself.
    pub fn true_score(&self) -> Result<f64> {
        let population = CovMatrix::from_diagonal(&self.spectrum, 1, Estimator::Population)?;
        Ok(isoscore_star_cov(&population, 0.0, &CovMatrix::zeros(self.dim()))?.score)
    }
}

/// Scores `[batch][ζ]` for one seed, each averaged over the seed's batches.
fn one_seed(config: &StabilityConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    let population = derive_seed(seed, 0x57AB);
    let mean = vec![0.0; config.dim()];
    let mut acc = CovAccumulator::new(config.dim());
    let mut start = 0;
    while start < config.reference_size {
        let end = (start + CHUNK_ROWS).min(config.reference_size);
        acc.push(sample_gaussian_rows(&mean, &config.spectrum, start..end, population)?.view())?;
        start = end;
    }
    let sigma_s = acc.finish(Estimator::Unbiased)?;

    let mut next_row = config.reference_size;
    let mut out = Vec::with_capacity(config.batch_sizes.len());
    for &b in &config.batch_sizes {
        let mut sums = vec![0.0; config.zetas.len()];
        for _ in 0..config.batches_per_seed {
            let batch = sample_gaussian_rows(&mean, &config.spectrum, next_row..next_row + b, population)?;
            next_row += b;
            let sigma_x = covariance(&batch, Estimator::Unbiased)?;
            for (sum, &zeta) in sums.iter_mut().zip(&config.zetas) {
                *sum += isoscore_star_cov(&sigma_x, zeta, &sigma_s)?.score;
            }
        }
        out.push(
            sums.into_iter()
                .map(|s| s / config.batches_per_seed as f64)
                .collect(),
        );
    }
    Ok(out)
}

/// IsoScore* of small batches against a reference covariance, per (batch
/// size, ζ). The true population value is recorded in the notes.
pub fn stability_sweep(config: &StabilityConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let per_seed = run_grid(&config.seeds, |&seed| one_seed(config, seed))?;
    let truth = config.true_score()?;
    let mut result = ExperimentResult::new(
        "stability",
        &["batch_size", "zeta"],
        vec!["isoscore_star".into()],
        &config.seeds,
        config,
    )?;
    let mut series: Vec<Series> = config
        .zetas
        .iter()
        .map(|z| Series::new(format!("ζ = {}", fmt_f64(*z))))
        .collect();
    for (bi, &b) in config.batch_sizes.iter().enumerate() {
        for (zi, &zeta) in config.zetas.iter().enumerate() {
            let values = per_seed.iter().map(|s| vec![s[bi][zi]]).collect();
            result.push_cell(vec![b.to_string(), fmt_f64(zeta)], values)?;
            let mean = result.cells.last().expect("just pushed").stats[0].mean;
            series[zi].points.push((b as f64, mean));
        }
    }
    let mut true_line = Series::new("true value".into());
    true_line.points = config.batch_sizes.iter().map(|&b| (b as f64, truth)).collect();
    series.push(true_line);
    result.notes.insert("true_score".into(), fmt_f64(truth));
    result.notes.insert("dimension".into(), config.dim().to_string());
    result.figure = Some(Figure {
        title: format!("IsoScore* stability, d = {}", config.dim()),
        x_label: "batch size".into(),
        y_label: "IsoScore*".into(),
        kind: ChartKind::Line,
        series,
    });
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> StabilityConfig {
        StabilityConfig {
            spectrum: default_spectrum(16),
            population_size: 6_000,
            reference_size: 4_000,
            batch_sizes: vec![12, 64],
            zetas: vec![0.0, 0.5, 1.0],
            batches_per_seed: 2,
            seeds: vec![0, 1],
        }
    }

    #[test]
    fn spectrum_shape() {
        assert_eq!(default_spectrum(6), vec![10.0, 6.0, 4.0, 4.0, 1.0, 1.0]);
        assert_eq!(default_spectrum(2), vec![10.0, 6.0]);
    }

    #[test]
    fn grid_is_complete_and_reproducible() {
        let config = small();
        let r = stability_sweep(&config).unwrap();
        assert_eq!(r.cells.len(), 6);
        assert!(r
            .cells
            .iter()
            .all(|c| c.per_seed.len() == 2 && c.stats[0].std.is_some()));
        assert_eq!(stability_sweep(&config).unwrap().summary_csv(), r.summary_csv());
        r.validate().unwrap();
    }

    #[test]
    fn shrinkage_moves_small_batches_toward_truth() {
        let r = stability_sweep(&small()).unwrap();
        let truth: f64 = r.notes["true_score"].parse().unwrap();
        let raw = r.stat(&["12", "0"], "isoscore_star").unwrap().mean;
        let shrunk = r.stat(&["12", "1"], "isoscore_star").unwrap().mean;
        assert!(raw < truth - 0.1, "{raw} vs {truth}");
        assert!((shrunk - truth).abs() < 0.05, "{shrunk} vs {truth}");
    }

    #[test]
    fn rejects_overlapping_population() {
        let config = StabilityConfig {
            population_size: 4_100,
            ..small()
        };
        assert!(matches!(stability_sweep(&config), Err(Error::InvalidConfig(_))));
    }
}
