//! Mini-batch SGD with optional CosReg or I-STAR penalties.
//!
//! Under I-STAR the reference covariance Σ_S is rebuilt from a fixed subsample
//! of the training set at the start of every epoch, i.e. after the previous
//! epoch's updates. Each mini-batch penalty uses only that batch's X̃.

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::LabeledData;
use super::loss::{cosreg_gradient, softmax_cross_entropy};
use super::model::{forward_capture, penalty_cloud, Activation, Gradients, LayerScope, MlpModel};
use crate::config::{dec, dec_vec};
use crate::error::{Error, Result};
use crate::grad::{isoscore_star_with_grad, DegeneracyPolicy};
use crate::metrics::isoscore_star;
use crate::tensor::{covariance, derive_seed, seeded_rng, CovMatrix, Estimator, PointCloud};
use crate::twonn::{twonn_id, DEFAULT_DISCARD_FRACTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    #[default]
    None,
    CosReg,
    IStar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(with = "dec")]
    pub lambda: f64,
    #[serde(with = "dec")]
    pub zeta: f64,
    pub regularizer: Regularizer,
    #[serde(with = "dec")]
    pub layer_scope: LayerScope,
    #[serde(with = "dec")]
    pub epochs: usize,
    #[serde(with = "dec")]
    pub batch_size: usize,
    #[serde(with = "dec")]
    pub learning_rate: f64,
    #[serde(with = "dec")]
    pub seed: u64,
    #[serde(with = "dec")]
    pub shrinkage_sample_size: usize,
    #[serde(with = "dec_vec")]
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(with = "dec")]
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            zeta: 0.2,
            regularizer: Regularizer::None,
            layer_scope: LayerScope::Global,
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.05,
            seed: 0,
            shrinkage_sample_size: 10_000,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn total_hidden_width(&self) -> usize {
        self.hidden.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.batch_size < 2 {
            return fail(format!("batch size must be ≥ 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return fail("epochs must be ≥ 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !self.lambda.is_finite() {
            return fail("lambda must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return fail(format!("zeta must lie in [0, 1], got {}", self.zeta));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w < 2) {
            return fail(format!(
                "need ≥ 1 hidden layer of width ≥ 2, got {:?}",
                self.hidden
            ));
        }
        if self.regularizer == Regularizer::IStar {
            match self.layer_scope {
                LayerScope::Global if self.hidden.windows(2).any(|w| w[0] != w[1]) => {
                    return fail(format!(
                        "global layer scope needs equal hidden widths, got {:?}",
                        self.hidden
                    ));
                }
                LayerScope::Single(l) if l >= self.hidden.len() => {
                    return fail(format!(
                        "layer {l} out of range for {} hidden layers",
                        self.hidden.len()
                    ));
                }
                _ => {}
            }
            let min = 10 * self.total_hidden_width();
            if self.shrinkage_sample_size < min {
                return fail(format!(
                    "shrinkage sample size {} is below 10 × total hidden width ({min})",
                    self.shrinkage_sample_size
                ));
            }
        }
        Ok(())
    }
}

/// Reference covariance Σ_S for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageState {
    pub sigma_s: CovMatrix,
    pub epoch_index: usize,
}

/// Rebuilds Σ_S from a forward pass of `model` over `sample`.
pub fn refresh_shrinkage(
    model: &MlpModel,
    sample: &PointCloud,
    epoch: usize,
    scope: LayerScope,
) -> Result<ShrinkageState> {
    let min = 10 * model.hidden_widths().iter().sum::<usize>();
    if sample.n_points() < min {
        return Err(Error::SampleTooSmall {
            got: sample.n_points(),
            min,
        });
    }
    let capture = forward_capture(model, sample)?;
    let x_tilde = penalty_cloud(&capture, scope)?;
    Ok(ShrinkageState {
        sigma_s: covariance(&x_tilde, Estimator::Unbiased)?,
        epoch_index: epoch,
    })
}

/// Loss components of one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub ce: f64,
    /// λ-weighted penalty term actually added to the loss.
    pub penalty: f64,
}

impl BatchLoss {
    pub fn total(&self) -> f64 {
        self.ce + self.penalty
    }
}

/// Loss and parameter gradients for one batch. `include_ce = false` drops the
/// cross-entropy gradient, leaving only the penalty's.
pub fn batch_gradients(
    model: &MlpModel,
    x: &PointCloud,
    labels: &[usize],
    config: &TrainConfig,
    state: Option<&ShrinkageState>,
    include_ce: bool,
) -> Result<(BatchLoss, Gradients)> {
    let capture = forward_capture(model, x)?;
    let (ce, mut d_logits) = softmax_cross_entropy(&capture.logits, labels)?;
    if !include_ce {
        d_logits.fill(0.0);
    }
    let n_hidden = model.n_hidden();
    let mut d_hidden: Vec<Option<Array2<f64>>> = vec![None; n_hidden];
    let lambda = config.lambda;
    let penalty = match config.regularizer {
        Regularizer::None => 0.0,
        Regularizer::CosReg => {
            let last = PointCloud::new(capture.activations[n_hidden - 1].clone())?;
            let (value, grad) = cosreg_gradient(&last)?;
            d_hidden[n_hidden - 1] = Some(grad * lambda);
            lambda * value
        }
        Regularizer::IStar => {
            let state = state
                .ok_or_else(|| Error::InvalidConfig("I-STAR training needs a shrinkage state".into()))?;
            let x_tilde = penalty_cloud(&capture, config.layer_scope)?;
            let out =
                isoscore_star_with_grad(&x_tilde, config.zeta, &state.sigma_s, DegeneracyPolicy::Jitter)?;
            // d/dX̃ of λ(1 − ι) is −λ ∂ι/∂X̃.
            let d_cloud = out.gradient.values * (-lambda);
            match config.layer_scope {
                LayerScope::Global => {
                    let m = x.n_points();
                    for (l, slot) in d_hidden.iter_mut().enumerate() {
                        *slot = Some(d_cloud.slice(s![l * m..(l + 1) * m, ..]).to_owned());
                    }
                }
                LayerScope::Single(l) => d_hidden[l] = Some(d_cloud),
            }
            lambda * (1.0 - out.score)
        }
    };
    let grads = model.backward(x.view(), &capture, &d_logits, &d_hidden);
    Ok((BatchLoss { ce, penalty }, grads))
}

/// Held-out metrics recorded after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    /// IsoScore* (ζ = 0) of the union of all hidden layers, or of the last
    /// hidden layer when widths differ.
    pub isoscore: f64,
    pub layer_isoscores: Vec<f64>,
    pub twonn_id: f64,
    pub mean_norm: f64,
    pub final_layer_mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("at least one epoch")
    }
}

/// IsoScore* of each hidden layer's activations on `data`, one Σ_S per layer.
pub fn layer_isoscores(
    model: &MlpModel,
    data: &PointCloud,
    zeta: f64,
    sigma_s: &[CovMatrix],
) -> Result<Vec<f64>> {
    let capture = forward_capture(model, data)?;
    if sigma_s.len() != capture.activations.len() {
        return Err(Error::DimensionMismatch {
            expected: capture.activations.len(),
            got: sigma_s.len(),
        });
    }
    capture
        .activations
        .into_iter()
        .zip(sigma_s)
        .map(|(a, s)| Ok(isoscore_star(&PointCloud::new(a)?, zeta, s)?.score))
        .collect()
}

fn evaluate(model: &MlpModel, val: &LabeledData, epoch: usize, train_loss: f64) -> Result<EpochRecord> {
    let capture = forward_capture(model, &val.features)?;
    let correct = capture
        .logits
        .rows()
        .into_iter()
        .zip(&val.labels)
        .filter(|(row, &label)| {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(k, _)| k);
            best == Some(label)
        })
        .count();
    let widths = model.hidden_widths();
    let union = if widths.windows(2).all(|w| w[0] == w[1]) {
        penalty_cloud(&capture, LayerScope::Global)?
    } else {
        PointCloud::new(capture.activations[widths.len() - 1].clone())?
    };
    let zero = |d: usize| CovMatrix::zeros(d);
    let isoscore = isoscore_star(&union, 0.0, &zero(union.dim()))?.score;
    let layer_isoscores = capture
        .activations
        .iter()
        .map(|a| Ok(isoscore_star(&PointCloud::new(a.clone())?, 0.0, &zero(a.ncols()))?.score))
        .collect::<Result<Vec<f64>>>()?;
    let last = PointCloud::new(capture.activations[widths.len() - 1].clone())?;
    let twonn = twonn_id(&last, DEFAULT_DISCARD_FRACTION)?.id_value;
    let mean = last.view().mean_axis(Axis(0)).expect("non-empty validation set");
    Ok(EpochRecord {
        epoch,
        train_loss,
        val_accuracy: correct as f64 / val.len() as f64,
        isoscore,
        layer_isoscores,
        twonn_id: twonn,
        mean_norm: mean.dot(&mean).sqrt(),
        final_layer_mean: mean.to_vec(),
    })
}

/// Trains a fresh model and returns it with the per-epoch report.
pub fn train_model(config: &TrainConfig, dataset: &LabeledData) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    let (train, val) = dataset.split(config.validation_fraction, config.seed)?;
    let mut model = MlpModel::init(
        dataset.features.dim(),
        &config.hidden,
        dataset.classes,
        config.activation,
        config.seed,
    )?;

    let shrink_sample = if config.regularizer == Regularizer::IStar {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeded_rng(derive_seed(config.seed, 0x5A3F)));
        order.truncate(config.shrinkage_sample_size.min(train.len()));
        Some(train.select(&order)?.features)
    } else {
        None
    };

    let mut order_rng = seeded_rng(derive_seed(config.seed, 0x0BDE));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let state = shrink_sample
            .as_ref()
            .map(|sample| refresh_shrinkage(&model, sample, epoch, config.layer_scope))
            .transpose()?;
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size).filter(|c| c.len() >= 2) {
            let batch = train.select(chunk)?;
            let (loss, grads) = batch_gradients(
                &model,
                &batch.features,
                &batch.labels,
                config,
                state.as_ref(),
                true,
            )?;
            model.apply_sgd(&grads, config.learning_rate);
            loss_sum += loss.total();
            batches += 1;
        }
        epochs.push(evaluate(&model, &val, epoch, loss_sum / batches.max(1) as f64)?);
    }
    Ok((model, TrainReport { epochs }))
}

pub fn train(config: &TrainConfig, dataset: &LabeledData) -> Result<TrainReport> {
    train_model(config, dataset).map(|(_, report)| report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::data::{make_blobs, BlobsSpec};
    use crate::nn::loss::istar_loss;
    use crate::nn::model::DenseLayer;
    use crate::tensor::sample_gaussian;
    use ndarray::{Array1, Array2};

    fn blobs(per_class: usize, seed: u64) -> LabeledData {
        make_blobs(&BlobsSpec {
            per_class,
            seed,
            ..BlobsSpec::default()
        })
        .unwrap()
    }

    fn identity_model(d: usize, layers: usize) -> MlpModel {
        let mut all: Vec<DenseLayer> = (0..layers)
            .map(|_| DenseLayer {
                weights: Array2::eye(d),
                bias: Array1::zeros(d),
                activation: Activation::Identity,
            })
            .collect();
        all.push(DenseLayer {
            weights: Array2::ones((d, 2)),
            bias: Array1::zeros(2),
            activation: Activation::Identity,
        });
        MlpModel::new(all).unwrap()
    }

    #[test]
    fn refresh_with_identity_layers_is_replicated_sample_covariance() {
        let model = identity_model(3, 2);
        let sample = sample_gaussian(&[1.0, 0.0, -1.0], &[2.0, 1.0, 0.5], 100, 4).unwrap();
        let state = refresh_shrinkage(&model, &sample, 3, LayerScope::Global).unwrap();
        let doubled = PointCloud::stack(&[sample.view(), sample.view()]).unwrap();
        assert_eq!(state.sigma_s, covariance(&doubled, Estimator::Unbiased).unwrap());
        assert_eq!(state.epoch_index, 3);
        let single = refresh_shrinkage(&model, &sample, 0, LayerScope::Single(1)).unwrap();
        assert_eq!(single.sigma_s, covariance(&sample, Estimator::Unbiased).unwrap());
        assert_eq!(
            refresh_shrinkage(&model, &sample, 3, LayerScope::Global).unwrap(),
            state
        );
    }

    #[test]
    fn refresh_rejects_small_sample_and_is_full_rank() {
        let model = MlpModel::init(16, &[32], 4, Activation::Tanh, 1).unwrap();
        let small = sample_gaussian(&[0.0; 16], &[1.0; 16], 100, 1).unwrap();
        assert!(matches!(
            refresh_shrinkage(&model, &small, 0, LayerScope::Global),
            Err(Error::SampleTooSmall { got: 100, min: 320 })
        ));
        let big = sample_gaussian(&[0.0; 16], &[1.0; 16], 10_000, 1).unwrap();
        let state = refresh_shrinkage(&model, &big, 0, LayerScope::Global).unwrap();
        let spectrum = crate::tensor::sym_eigvals(&state.sigma_s).unwrap();
        // Width 32 from 16 inputs through tanh: the nonlinearity fills every direction.
        assert!(*spectrum.values().last().unwrap() > 0.0);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        let bad = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.batch_size = 1));
        assert!(bad(|c| c.zeta = 1.5));
        assert!(bad(|c| {
            c.regularizer = Regularizer::IStar;
            c.hidden = vec![32, 16];
        }));
        assert!(bad(|c| {
            c.regularizer = Regularizer::IStar;
            c.shrinkage_sample_size = 100;
        }));
        assert!(bad(|c| {
            c.regularizer = Regularizer::IStar;
            c.layer_scope = LayerScope::Single(2);
        }));
        let json = serde_json::to_string(&ok).unwrap();
        assert!(json.contains(r#""zeta":"0.2""#) && json.contains(r#""layer_scope":"global""#));
        assert_eq!(serde_json::from_str::<TrainConfig>(&json).unwrap(), ok);
        let partial: TrainConfig = serde_json::from_str(r#"{"lambda":"3","epochs":"2"}"#).unwrap();
        assert_eq!((partial.lambda, partial.epochs, partial.zeta), (3.0, 2, 0.2));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lamda":"3"}"#).is_err());
    }

    #[test]
    fn penalty_alone_moves_parameters() {
        let data = blobs(40, 2);
        let model = MlpModel::init(16, &[8, 8], 4, Activation::Tanh, 0).unwrap();
        let batch = data.select(&(0..32).collect::<Vec<_>>()).unwrap();
        for regularizer in [Regularizer::IStar, Regularizer::CosReg] {
            let config = TrainConfig {
                regularizer,
                lambda: 1.0,
                hidden: vec![8, 8],
                ..TrainConfig::default()
            };
            let state = refresh_shrinkage(&model, &data.features, 0, LayerScope::Global).unwrap();
            let (_, g) = batch_gradients(
                &model,
                &batch.features,
                &batch.labels,
                &config,
                Some(&state),
                false,
            )
            .unwrap();
            assert!(g.max_abs() > 0.0, "{regularizer:?}");
            let plain = TrainConfig {
                regularizer: Regularizer::None,
                ..config
            };
            let (_, g0) =
                batch_gradients(&model, &batch.features, &batch.labels, &plain, None, false).unwrap();
            assert_eq!(g0.max_abs(), 0.0);
        }
    }

    #[test]
    fn loss_decomposition_matches_istar_loss() {
        let data = blobs(40, 5);
        let model = MlpModel::init(16, &[8, 8], 4, Activation::Tanh, 3).unwrap();
        let state = refresh_shrinkage(&model, &data.features, 0, LayerScope::Global).unwrap();
        let batch = data.select(&(10..42).collect::<Vec<_>>()).unwrap();
        let config = TrainConfig {
            regularizer: Regularizer::IStar,
            lambda: -2.5,
            zeta: 0.4,
            hidden: vec![8, 8],
            ..TrainConfig::default()
        };
        let (loss, _) = batch_gradients(
            &model,
            &batch.features,
            &batch.labels,
            &config,
            Some(&state),
            true,
        )
        .unwrap();
        let capture = forward_capture(&model, &batch.features).unwrap();
        let x_tilde = penalty_cloud(&capture, LayerScope::Global).unwrap();
        let reference = istar_loss(loss.ce, &x_tilde, 0.4, &state, -2.5).unwrap();
        assert!((loss.total() - reference).abs() < 1e-12);
        let score = isoscore_star(&x_tilde, 0.4, &state.sigma_s).unwrap().score;
        assert!((reference - loss.ce - (-2.5) * (1.0 - score)).abs() < 1e-12);
    }

    #[test]
    fn istar_penalty_gradient_matches_finite_differences() {
        let data = blobs(40, 7);
        let model = MlpModel::init(16, &[6, 6], 4, Activation::Tanh, 8).unwrap();
        let state = refresh_shrinkage(&model, &data.features, 0, LayerScope::Global).unwrap();
        let batch = data.select(&(0..24).collect::<Vec<_>>()).unwrap();
        let config = TrainConfig {
            regularizer: Regularizer::IStar,
            lambda: 1.0,
            zeta: 0.3,
            hidden: vec![6, 6],
            ..TrainConfig::default()
        };
        let penalty = |m: &MlpModel| {
            batch_gradients(m, &batch.features, &batch.labels, &config, Some(&state), false)
                .unwrap()
                .0
                .penalty
        };
        let (_, grads) = batch_gradients(
            &model,
            &batch.features,
            &batch.labels,
            &config,
            Some(&state),
            false,
        )
        .unwrap();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for l in 0..2 {
            for (idx, &g) in grads.weights[l].indexed_iter() {
                let mut layers = model.layers().to_vec();
                layers[l].weights[idx] += h;
                let plus = penalty(&MlpModel::new(layers.clone()).unwrap());
                layers[l].weights[idx] -= 2.0 * h;
                let minus = penalty(&MlpModel::new(layers).unwrap());
                worst = worst.max(((plus - minus) / (2.0 * h) - g).abs());
            }
        }
        assert!(worst < 1e-7, "{worst}");
    }

    #[test]
    fn baseline_training_separates_blobs_and_is_deterministic() {
        let data = blobs(1_000, 0);
        let config = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        let report = train(&config, &data).unwrap();
        assert_eq!(report.epochs.len(), 10);
        assert!(
            report.last().val_accuracy > 0.95,
            "{}",
            report.last().val_accuracy
        );
        assert_eq!(train(&config, &data).unwrap(), report);
    }

    #[test]
    fn istar_sign_moves_isotropy() {
        let data = blobs(1_000, 1);
        let run = |lambda: f64| {
            let config = TrainConfig {
                regularizer: Regularizer::IStar,
                lambda,
                epochs: 10,
                shrinkage_sample_size: 2_000,
                seed: 1,
                ..TrainConfig::default()
            };
            train(&config, &data).unwrap().last().isoscore
        };
        let (up, down) = (run(3.0), run(-3.0));
        assert!(up > down, "{up} vs {down}");
    }
}
