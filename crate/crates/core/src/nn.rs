//! Dense MLP with explicit per-layer gradients.
//!
//! Weights are stored `fan_in × fan_out`, so a layer computes `x·W + b` on a
//! row-major batch. Dropout follows every hidden activation and uses inverted
//! scaling, so evaluation needs no correction.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{QuailError, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
    Gelu,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Relu, Activation::Elu, Activation::Gelu];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Gelu => {
                let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
            }
        }
    }
}

// tanh approximation constants: sqrt(2/π) and 0.044715.
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_K: f64 = 0.044_715;

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Gelu => "gelu",
        })
    }
}

impl FromStr for Activation {
    type Err = QuailError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "elu" => Ok(Activation::Elu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(QuailError::invalid(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    pub dropout_rate: f64,
}

/// Values retained by [`MlpModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each layer (after dropout for hidden layers).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    /// Scaled keep masks, one per hidden layer when dropout was active.
    masks: Vec<Option<Array2<f64>>>,
    output: Array2<f64>,
    shapes: Vec<(usize, usize)>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Gradients of the mean task loss, congruent with [`MlpModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// dL/d(model input), one row per sample.
    pub input: Array2<f64>,
    /// dL/dg when the input was gated; filled in by the caller.
    pub gate: Option<Array1<f64>>,
}

impl ParamGrads {
    pub fn all_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
            && self.gate.as_ref().is_none_or(|g| g.iter().all(|v| v.is_finite()))
    }
}

impl MlpModel {
    /// Builds a model with Glorot-uniform weights and zero biases.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        activation: Activation,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(QuailError::invalid("layer widths must be positive"));
        }
        if !(0.0..=0.5).contains(&dropout_rate) {
            return Err(QuailError::invalid(format!("dropout rate {dropout_rate} outside [0, 0.5]")));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(MlpModel {
            layers,
            activation,
            dropout_rate,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn n_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weight.dim()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Runs the network. Dropout masks are drawn from `dropout_seed` only in
    /// training mode with a positive rate.
    pub fn forward(&self, x: ArrayView2<f64>, train_mode: bool, dropout_seed: u64) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.input_dim() {
            return Err(QuailError::shape(format!(
                "input width {} for a model expecting {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let use_dropout = train_mode && self.dropout_rate > 0.0;
        let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(dropout_seed);
        let keep = 1.0 - self.dropout_rate;
        let last = self.layers.len() - 1;

        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight) + &layer.bias;
            inputs.push(h);
            if i == last {
                let cache = ForwardCache {
                    inputs,
                    pre,
                    masks,
                    output: z.clone(),
                    shapes: self.shapes(),
                };
                return Ok((z, cache));
            }
            let mut a = z.mapv(|v| self.activation.apply(v));
            pre.push(z);
            if use_dropout {
                let mask = Array2::from_shape_simple_fn(a.dim(), || {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                a *= &mask;
                masks.push(Some(mask));
            } else {
                masks.push(None);
            }
            h = a;
        }
        unreachable!("model has at least one layer")
    }

    /// Evaluation-mode forward pass.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, false, 0)?.0)
    }

    /// Exact gradients of the mean task loss for the batch in `cache`.
    pub fn backward(&self, cache: &ForwardCache, y: &[f64], loss: LossKind) -> Result<ParamGrads> {
        if cache.shapes != self.shapes() {
            return Err(QuailError::invalid("forward cache does not belong to this model"));
        }
        let mut delta = loss_gradient(cache.output.view(), y, loss)?;
        let n_layers = self.layers.len();
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for i in (0..n_layers).rev() {
            let layer = &self.layers[i];
            weights.push(cache.inputs[i].t().dot(&delta));
            biases.push(delta.sum_axis(Axis(0)));
            let mut d_in = delta.dot(&layer.weight.t());
            if i > 0 {
                if let Some(mask) = &cache.masks[i - 1] {
                    d_in *= mask;
                }
                Zip::from(&mut d_in)
                    .and(&cache.pre[i - 1])
                    .for_each(|d, &z| *d *= self.activation.derivative(z));
            }
            delta = d_in;
        }
        weights.reverse();
        biases.reverse();
        Ok(ParamGrads {
            weights,
            biases,
            input: delta,
            gate: None,
        })
    }
}

fn check_targets(pred: ArrayView2<f64>, y: &[f64], loss: LossKind) -> Result<()> {
    if pred.nrows() != y.len() {
        return Err(QuailError::shape(format!("{} predictions for {} targets", pred.nrows(), y.len())));
    }
    if pred.nrows() == 0 {
        return Err(QuailError::invalid("empty batch"));
    }
    match loss {
        LossKind::CrossEntropy => {
            let k = pred.ncols();
            if let Some(bad) = y.iter().find(|&&t| t < 0.0 || t.fract() != 0.0 || t as usize >= k) {
                return Err(QuailError::invalid(format!("class index {bad} out of range for {k} classes")));
            }
        }
        LossKind::Mse => {
            if pred.ncols() != 1 {
                return Err(QuailError::shape("regression output must have width 1"));
            }
        }
    }
    Ok(())
}

fn log_sum_exp(row: ndarray::ArrayView1<f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Mean task loss over the batch.
pub fn task_loss(pred: ArrayView2<f64>, y: &[f64], loss: LossKind) -> Result<f64> {
    check_targets(pred, y, loss)?;
    let n = y.len() as f64;
    let total: f64 = match loss {
        LossKind::CrossEntropy => pred
            .outer_iter()
            .zip(y)
            .map(|(row, &t)| log_sum_exp(row) - row[t as usize])
            .sum(),
        LossKind::Mse => pred.column(0).iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum(),
    };
    Ok(total / n)
}

/// dL/dpred of the mean task loss.
fn loss_gradient(pred: ArrayView2<f64>, y: &[f64], loss: LossKind) -> Result<Array2<f64>> {
    check_targets(pred, y, loss)?;
    let n = y.len() as f64;
    let mut g = Array2::zeros(pred.dim());
    match loss {
        LossKind::CrossEntropy => {
            for ((mut grow, prow), &t) in g.outer_iter_mut().zip(pred.outer_iter()).zip(y) {
                let lse = log_sum_exp(prow);
                for (gv, &p) in grow.iter_mut().zip(prow.iter()) {
                    *gv = (p - lse).exp() / n;
                }
                grow[t as usize] -= 1.0 / n;
            }
        }
        LossKind::Mse => {
            for (i, &t) in y.iter().enumerate() {
                g[[i, 0]] = 2.0 * (pred[[i, 0]] - t) / n;
            }
        }
    }
    Ok(g)
}

/// Row-wise argmax of logits.
pub fn argmax_rows(pred: ArrayView2<f64>) -> Vec<usize> {
    pred.outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

pub const CHECKPOINT_FORMAT: &str = "quail-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    fan_in: usize,
    fan_out: usize,
    /// Row-major `fan_in × fan_out`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Versioned JSON checkpoint of a model and, optionally, its gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    version: u32,
    activation: Activation,
    dropout_rate: f64,
    layers: Vec<LayerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gates: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(model: &MlpModel, gates: Option<&Array1<f64>>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            activation: model.activation,
            dropout_rate: model.dropout_rate,
            layers: model
                .layers
                .iter()
                .map(|l| LayerRecord {
                    fan_in: l.fan_in(),
                    fan_out: l.fan_out(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            gates: gates.map(|g| g.to_vec()),
        }
    }

    pub fn into_parts(self) -> Result<(MlpModel, Option<Array1<f64>>)> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(QuailError::invalid(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.layers.is_empty() {
            return Err(QuailError::invalid("checkpoint has no layers"));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, rec) in self.layers.into_iter().enumerate() {
            if i > 0 && rec.fan_in != layers.last().map(Dense::fan_out).unwrap_or(0) {
                return Err(QuailError::shape(format!("layer {i} does not compose with layer {}", i - 1)));
            }
            let weight = Array2::from_shape_vec((rec.fan_in, rec.fan_out), rec.weight)
                .map_err(|e| QuailError::shape(e.to_string()))?;
            if rec.bias.len() != rec.fan_out {
                return Err(QuailError::shape(format!("layer {i} bias length")));
            }
            layers.push(Dense {
                weight,
                bias: Array1::from(rec.bias),
            });
        }
        let model = MlpModel {
            layers,
            activation: self.activation,
            dropout_rate: self.dropout_rate,
        };
        if let Some(g) = &self.gates {
            if g.len() != model.input_dim() {
                return Err(QuailError::shape("gate vector does not match the input width"));
            }
        }
        Ok((model, self.gates.map(Array1::from)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| QuailError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QuailError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
