//! Seeded experiment grids: covariance-stability sweeps on synthetic Gaussians
//! and training sweeps on the blobs task.
//!
//! Every experiment is a pure function of its config and seed list. Grid cells
//! run on a worker pool sized by `ISOSCOPE_THREADS`, and results are assembled
//! in grid order, so the output never depends on scheduling.

mod stability;
pub mod svg;
mod training;

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use stability::{default_spectrum, stability_sweep, StabilityConfig};
pub use svg::{ChartKind, Figure, Series};
pub use training::{
    cosreg_mean_experiment, id_vs_lambda, lambda_sweep, layer_experiment, layer_profile, spearman,
    zeta_sweep, LayerVariant, TrainingGrid,
};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "ISOSCOPE_THREADS";

/// Mean and, with two or more seeds, sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Self { mean, std }
    }
}

/// One point of the parameter grid with its per-seed metric values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub params: Vec<String>,
    /// `per_seed[s][m]` is metric `m` under the `s`-th seed.
    pub per_seed: Vec<Vec<f64>>,
    pub stats: Vec<Stat>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub experiment_id: String,
    pub param_names: Vec<String>,
    pub metric_names: Vec<String>,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub cells: Vec<GridCell>,
    /// Derived scalars such as the best ζ or a rank correlation.
    pub notes: BTreeMap<String, String>,
    #[serde(skip)]
    pub figure: Option<Figure>,
}

/// SHA-256 of the key-sorted compact JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(value)?)?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

impl ExperimentResult {
    pub fn new<C: Serialize>(
        experiment_id: &str,
        param_names: &[&str],
        metric_names: Vec<String>,
        seeds: &[u64],
        config: &C,
    ) -> Result<Self> {
        if experiment_id.is_empty()
            || !experiment_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::InvalidParameter(format!(
                "experiment id {experiment_id:?} must be non-empty ASCII alphanumerics, '_' or '-'"
            )));
        }
        if seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "an experiment needs at least one seed".into(),
            ));
        }
        Ok(Self {
            experiment_id: experiment_id.to_string(),
            param_names: param_names.iter().map(|s| s.to_string()).collect(),
            metric_names,
            seeds: seeds.to_vec(),
            config: serde_json::to_value(config)?,
            config_hash: config_hash(config)?,
            cells: Vec::new(),
            notes: BTreeMap::new(),
            figure: None,
        })
    }

    pub fn push_cell(&mut self, params: Vec<String>, per_seed: Vec<Vec<f64>>) -> Result<()> {
        if params.len() != self.param_names.len() {
            return Err(Error::DimensionMismatch {
                expected: self.param_names.len(),
                got: params.len(),
            });
        }
        if per_seed.len() != self.seeds.len() {
            return Err(Error::DimensionMismatch {
                expected: self.seeds.len(),
                got: per_seed.len(),
            });
        }
        if let Some(bad) = per_seed.iter().find(|r| r.len() != self.metric_names.len()) {
            return Err(Error::DimensionMismatch {
                expected: self.metric_names.len(),
                got: bad.len(),
            });
        }
        let stats = (0..self.metric_names.len())
            .map(|m| Stat::of(&per_seed.iter().map(|r| r[m]).collect::<Vec<_>>()))
            .collect();
        self.cells.push(GridCell {
            params,
            per_seed,
            stats,
            config_hash: self.config_hash.clone(),
        });
        Ok(())
    }

    /// Checks that every row carries the experiment's config hash and that
    /// the hash still matches the recorded config.
    pub fn validate(&self) -> Result<()> {
        let expected = config_hash(&self.config)?;
        if expected != self.config_hash {
            return Err(Error::ConfigHashMismatch {
                expected,
                got: self.config_hash.clone(),
            });
        }
        for cell in &self.cells {
            if cell.config_hash != expected {
                return Err(Error::ConfigHashMismatch {
                    expected: expected.clone(),
                    got: cell.config_hash.clone(),
                });
            }
            if cell.per_seed.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "cell {:?} has no seeds",
                    cell.params
                )));
            }
        }
        Ok(())
    }

    pub fn metric_index(&self, name: &str) -> Option<usize> {
        self.metric_names.iter().position(|m| m == name)
    }

    pub fn cell(&self, params: &[&str]) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.params.iter().map(String::as_str).eq(params.iter().copied()))
    }

    pub fn stat(&self, params: &[&str], metric: &str) -> Option<Stat> {
        Some(self.cell(params)?.stats[self.metric_index(metric)?])
    }

    /// Per-seed values of `metric` at `params`, in seed order.
    pub fn seed_values(&self, params: &[&str], metric: &str) -> Option<Vec<f64>> {
        let m = self.metric_index(metric)?;
        Some(self.cell(params)?.per_seed.iter().map(|r| r[m]).collect())
    }

    /// Summary table: parameters, `<metric>_mean`, `<metric>_std`, seed count
    /// and config hash. Std cells are empty when only one seed ran.
    pub fn summary_csv(&self) -> String {
        let mut header: Vec<String> = self.param_names.clone();
        for m in &self.metric_names {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        header.push("n_seeds".into());
        header.push("config_hash".into());
        let mut out = header.join(",") + "\n";
        for cell in &self.cells {
            let mut row = cell.params.clone();
            for s in &cell.stats {
                row.push(crate::config::fmt_f64(s.mean));
                row.push(s.std.map(crate::config::fmt_f64).unwrap_or_default());
            }
            row.push(cell.per_seed.len().to_string());
            row.push(cell.config_hash.clone());
            out += &(row.join(",") + "\n");
        }
        out
    }

    /// One row per (cell, seed).
    pub fn runs_csv(&self) -> String {
        let mut header: Vec<String> = self.param_names.clone();
        header.push("seed".into());
        header.extend(self.metric_names.iter().cloned());
        header.push("config_hash".into());
        let mut out = header.join(",") + "\n";
        for cell in &self.cells {
            for (seed, values) in self.seeds.iter().zip(&cell.per_seed) {
                let mut row = cell.params.clone();
                row.push(seed.to_string());
                row.extend(values.iter().map(|&v| crate::config::fmt_f64(v)));
                row.push(cell.config_hash.clone());
                out += &(row.join(",") + "\n");
            }
        }
        out
    }
}

/// Worker threads: `ISOSCOPE_THREADS` when set to a positive integer, else the
/// number of available cores.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `job` over `items` on a dedicated pool, returning results in input order.
pub(crate) fn run_grid<T, R, F>(items: &[T], job: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    pool.install(|| items.par_iter().map(&job).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_std_only_with_two_seeds() {
        assert_eq!(Stat::of(&[2.0]), Stat { mean: 2.0, std: None });
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std.unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn csv_layout_and_hash_checks() {
        let mut r = ExperimentResult::new("demo", &["p"], vec!["m".into()], &[1], &[1, 2]).unwrap();
        r.push_cell(vec!["0.5".into()], vec![vec![0.25]]).unwrap();
        assert_eq!(
            r.summary_csv(),
            format!(
                "p,m_mean,m_std,n_seeds,config_hash\n0.5,0.25,,1,{}\n",
                r.config_hash
            )
        );
        assert_eq!(
            r.runs_csv(),
            format!("p,seed,m,config_hash\n0.5,1,0.25,{}\n", r.config_hash)
        );
        r.validate().unwrap();
        assert!(r.push_cell(vec!["1".into()], vec![vec![1.0, 2.0]]).is_err());
        r.cells[0].config_hash = "0".repeat(64);
        assert!(matches!(r.validate(), Err(Error::ConfigHashMismatch { .. })));
        assert!(ExperimentResult::new("../x", &[], vec![], &[1], &0).is_err());
        assert!(ExperimentResult::new("x", &[], vec![], &[], &0).is_err());
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"a":"1","b":"2"}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"b":"2","a":"1"}"#).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    }
}
