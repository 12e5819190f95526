use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{derive_seed, seeded_rng, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Identity => {}
        }
    }

    /// Multiplies `upstream` by the derivative, given the layer's pre-activation
    /// and output.
    fn backprop(self, upstream: &mut Array2<f64>, pre: &Array2<f64>, out: &Array2<f64>) {
        match self {
            Activation::Relu => {
                ndarray::Zip::from(upstream).and(pre).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            Activation::Tanh => {
                ndarray::Zip::from(upstream)
                    .and(out)
                    .for_each(|g, &y| *g *= 1.0 - y * y);
            }
            Activation::Identity => {}
        }
    }
}

/// A dense layer computing `act(x W + b)`; `weights` is inputs × outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Which hidden activations form the penalty cloud X̃.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LayerScope {
    /// Row-wise union of every hidden layer (widths must agree).
    #[default]
    Global,
    /// A single hidden layer, by index.
    Single(usize),
}

impl fmt::Display for LayerScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerScope::Global => f.write_str("global"),
            LayerScope::Single(l) => write!(f, "single:{l}"),
        }
    }
}

impl FromStr for LayerScope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "global" => Ok(LayerScope::Global),
            other => other
                .strip_prefix("single:")
                .and_then(|l| l.parse().ok())
                .map(LayerScope::Single)
                .ok_or_else(|| format!("expected \"global\" or \"single:<layer>\", got {other:?}")),
        }
    }
}

/// Multilayer perceptron. Every layer but the last is hidden; the last
/// produces class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<DenseLayer>,
}

/// Output of [`forward_capture`].
#[derive(Debug, Clone)]
pub struct ForwardCapture {
    pub logits: Array2<f64>,
    /// Post-activation output of each hidden layer.
    pub activations: Vec<Array2<f64>>,
    pre_activations: Vec<Array2<f64>>,
}

/// Parameter gradients, aligned with the model's layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.bias.iter().flat_map(|b| b.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl MlpModel {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: layer.weights.ncols(),
                    got: layer.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].weights.ncols() != layer.weights.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: layers[i - 1].weights.ncols(),
                    got: layer.weights.nrows(),
                });
            }
            if layer
                .weights
                .iter()
                .chain(layer.bias.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} has non-finite parameters"
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-normal weights, zero biases, `activation` on hidden layers and an
    /// identity output layer.
    pub fn init(
        d_in: usize,
        hidden: &[usize],
        classes: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = seeded_rng(derive_seed(seed, 0x1417));
        let mut dims = vec![d_in];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let std = (2.0 / (w[0] + w[1]) as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((w[0], w[1]), |_| std * rng.sample::<f64, _>(StandardNormal));
                DenseLayer {
                    weights,
                    bias: Array1::zeros(w[1]),
                    activation: if i + 1 < dims.len() - 1 {
                        activation
                    } else {
                        Activation::Identity
                    },
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn classes(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.ncols()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weights.ncols())
            .collect()
    }

    pub fn n_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    /// Reverse pass. `d_logits` is the loss gradient at the output and
    /// `d_hidden[l]`, when present, an extra gradient injected at hidden layer `l`.
    pub fn backward(
        &self,
        input: ArrayView2<'_, f64>,
        capture: &ForwardCapture,
        d_logits: &Array2<f64>,
        d_hidden: &[Option<Array2<f64>>],
    ) -> Gradients {
        let n_layers = self.layers.len();
        let mut weights = vec![Array2::zeros((0, 0)); n_layers];
        let mut bias = vec![Array1::zeros(0); n_layers];
        let mut upstream = d_logits.clone();
        for l in (0..n_layers).rev() {
            if let Some(Some(extra)) = d_hidden.get(l).filter(|_| l + 1 < n_layers) {
                upstream += extra;
            }
            let layer = &self.layers[l];
            let out = if l + 1 < n_layers {
                &capture.activations[l]
            } else {
                &capture.logits
            };
            layer
                .activation
                .backprop(&mut upstream, &capture.pre_activations[l], out);
            let layer_in = if l == 0 {
                input
            } else {
                capture.activations[l - 1].view()
            };
            weights[l] = layer_in.t().dot(&upstream);
            bias[l] = upstream.sum_axis(Axis(0));
            if l > 0 {
                upstream = upstream.dot(&layer.weights.t());
            }
        }
        Gradients { weights, bias }
    }

    pub fn apply_sgd(&mut self, grads: &Gradients, learning_rate: f64) {
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.bias) {
            layer.weights.scaled_add(-learning_rate, gw);
            layer.bias.scaled_add(-learning_rate, gb);
        }
    }
}

/// Forward pass that keeps every hidden layer's activations.
pub fn forward_capture(model: &MlpModel, batch: &PointCloud) -> Result<ForwardCapture> {
    if batch.dim() != model.d_in() {
        return Err(Error::DimensionMismatch {
            expected: model.d_in(),
            got: batch.dim(),
        });
    }
    let n_layers = model.layers.len();
    let mut activations = Vec::with_capacity(n_layers - 1);
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut current = batch.as_array().clone();
    for layer in &model.layers {
        let pre = current.dot(&layer.weights) + &layer.bias;
        let mut out = pre.clone();
        layer.activation.apply(&mut out);
        pre_activations.push(pre);
        activations.push(out.clone());
        current = out;
    }
    let logits = activations.pop().expect("at least one layer");
    Ok(ForwardCapture {
        logits,
        activations,
        pre_activations,
    })
}

/// The penalty cloud X̃ for `scope`: the union of hidden layers, or one layer.
pub fn penalty_cloud(capture: &ForwardCapture, scope: LayerScope) -> Result<PointCloud> {
    match scope {
        LayerScope::Global => {
            let widths: Vec<usize> = capture.activations.iter().map(|a| a.ncols()).collect();
            if widths.windows(2).any(|w| w[0] != w[1]) {
                return Err(Error::InvalidConfig(format!(
                    "global layer scope needs equal hidden widths, got {widths:?}"
                )));
            }
            let views: Vec<_> = capture.activations.iter().map(|a| a.view()).collect();
            PointCloud::stack(&views)
        }
        LayerScope::Single(l) => capture
            .activations
            .get(l)
            .cloned()
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "layer {l} out of range for {} hidden layers",
                    capture.activations.len()
                ))
            })
            .and_then(PointCloud::new),
    }
}
