//! Optimizers, learning-rate schedules, early stopping, the curriculum
//! sampler and the epoch loop minimizing `task + λ_t · L_gate`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayViewD, ArrayViewMutD};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedMatrix, Task};
use crate::error::{QuailError, Result};
use crate::eval;
use crate::nn::{self, LossKind, MlpModel};
use crate::quail::{self, GateConfig, GateState};
use crate::rng::{self, tag};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Epochs without improvement before the plateau scheduler halves the rate.
pub const PLATEAU_PATIENCE: usize = 8;
pub const PLATEAU_MIN_LR: f64 = 1e-6;
/// Epoch period of the step scheduler.
pub const STEP_PERIOD: usize = 64;
pub const LR_DECAY_FACTOR: f64 = 0.5;

/// Initial curriculum temperature β0.
pub const CURRICULUM_BETA0: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdamW,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = QuailError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            other => Err(QuailError::invalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Plateau,
    Cosine,
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurriculumSchedule {
    Linear,
    Exponential,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub max_epochs: usize,
    pub patience: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quail: Option<GateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curriculum: Option<CurriculumSchedule>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(QuailError::invalid(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(QuailError::invalid(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(QuailError::invalid("batch size, max epochs and patience must be positive"));
        }
        if let Some(q) = &self.quail {
            q.validate()?;
        }
        Ok(())
    }
}

/// One parameter tensor handed to the optimizer.
pub struct ParamSlot<'a> {
    pub value: ArrayViewMutD<'a, f64>,
    pub grad: ArrayViewD<'a, f64>,
    /// Whether weight decay applies (false for gates).
    pub decay: bool,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update. Slots must arrive in the same order every call.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>], lr: f64, weight_decay: f64) -> Result<()> {
        for (i, s) in slots.iter().enumerate() {
            if s.value.shape() != s.grad.shape() {
                return Err(QuailError::shape(format!("parameter {i}: value and gradient shapes differ")));
            }
            if s.grad.iter().any(|g| !g.is_finite()) {
                return Err(QuailError::NonFinite(format!("gradient of parameter tensor {i}")));
            }
        }
        if self.first.is_empty() && self.kind != OptimizerKind::Sgd {
            self.first = slots.iter().map(|s| vec![0.0; s.value.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for s in slots.iter_mut() {
                    let wd = if s.decay { weight_decay } else { 0.0 };
                    for (p, &g) in s.value.iter_mut().zip(s.grad.iter()) {
                        *p -= lr * (g + wd * *p);
                    }
                }
            }
            OptimizerKind::Adam | OptimizerKind::AdamW => {
                let decoupled = self.kind == OptimizerKind::AdamW;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.step);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.step);
                for (i, s) in slots.iter_mut().enumerate() {
                    let wd = if s.decay { weight_decay } else { 0.0 };
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (((p, &g), m), v) in s.value.iter_mut().zip(s.grad.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let g = if decoupled {
                            *p -= lr * wd * *p;
                            g
                        } else {
                            g + wd * *p
                        };
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Mutable state of the on-plateau scheduler.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauState {
    pub lr: f64,
    pub bad_epochs: usize,
}

impl PlateauState {
    pub fn new(lr0: f64) -> Self {
        PlateauState { lr: lr0, bad_epochs: 0 }
    }

    /// Records one epoch's validation outcome.
    pub fn observe(&mut self, improved: bool) {
        if improved {
            self.bad_epochs = 0;
            return;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= PLATEAU_PATIENCE {
            self.lr = (self.lr * LR_DECAY_FACTOR).max(PLATEAU_MIN_LR);
            self.bad_epochs = 0;
        }
    }
}

/// Learning rate for 0-based epoch `t` of `total`.
pub fn lr_at(schedule: LrSchedule, lr0: f64, t: usize, total: usize, plateau: &PlateauState) -> f64 {
    match schedule {
        LrSchedule::Plateau => plateau.lr,
        LrSchedule::Cosine => lr0 * (1.0 + (PI * t as f64 / total.max(1) as f64).cos()) / 2.0,
        LrSchedule::Step => lr0 * LR_DECAY_FACTOR.powi((t / STEP_PERIOD) as i32),
    }
}

/// Per-row cleanliness with an annealed sampling temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumWeights {
    pub cleanliness: Vec<f64>,
    pub schedule: CurriculumSchedule,
    pub beta0: f64,
}

impl CurriculumWeights {
    pub fn new(cleanliness: Vec<f64>, schedule: CurriculumSchedule) -> Self {
        CurriculumWeights {
            cleanliness,
            schedule,
            beta0: CURRICULUM_BETA0,
        }
    }

    pub fn beta_at(&self, t: usize, total: usize) -> f64 {
        let frac = t as f64 / total.max(1) as f64;
        match self.schedule {
            CurriculumSchedule::Linear => self.beta0 * (1.0 - frac).max(0.0),
            CurriculumSchedule::Exponential => self.beta0 * (-5.0 * frac).exp(),
            CurriculumSchedule::Step => {
                if frac < 1.0 / 3.0 {
                    self.beta0
                } else if frac < 2.0 / 3.0 {
                    self.beta0 / 2.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Sampling probabilities p_i ∝ cleanliness_i^β(t); uniform when every row
/// has zero cleanliness.
pub fn curriculum_probs(weights: &CurriculumWeights, t: usize, total: usize) -> Vec<f64> {
    let n = weights.cleanliness.len();
    let beta = weights.beta_at(t, total);
    let raw: Vec<f64> = weights.cleanliness.iter().map(|c| c.max(0.0).powf(beta)).collect();
    let sum: f64 = raw.iter().sum();
    if sum.is_nan() || sum <= 0.0 {
        return vec![1.0 / n as f64; n];
    }
    raw.into_iter().map(|r| r / sum).collect()
}

/// Patience-based early stopping on a maximized metric.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub epochs_since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            epochs_since_best: 0,
        }
    }

    /// Returns whether `metric` is a strict improvement. Non-finite metrics
    /// never improve.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        let improved = metric.is_finite() && self.best.is_none_or(|b| metric > b);
        if improved {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.epochs_since_best = 0;
        } else {
            self.epochs_since_best += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.epochs_since_best >= self.patience
    }
}

/// One line of the per-trial history log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub lambda: f64,
    /// Batch mean of task + λ·gate.
    pub train_loss: f64,
    pub task_loss: f64,
    pub gate_loss: f64,
    pub val_metric: f64,
    pub anchor_refreshed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub gates: Option<GateState>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
}

pub fn loss_kind(task: Task) -> LossKind {
    match task {
        Task::Classification => LossKind::CrossEntropy,
        Task::Regression => LossKind::Mse,
    }
}

/// Predictions of the (optionally gated) model in evaluation mode.
pub fn predict(model: &MlpModel, gates: Option<&GateState>, data: &EncodedMatrix) -> Result<ndarray::Array2<f64>> {
    match gates {
        Some(gs) => model.predict(quail::gate_forward(gs.g.view(), data.x.view())?.view()),
        None => model.predict(data.x.view()),
    }
}

/// F1-macro for classification, R² for regression.
pub fn evaluate(model: &MlpModel, gates: Option<&GateState>, data: &EncodedMatrix) -> Result<f64> {
    let pred = predict(model, gates, data)?;
    match data.task {
        Task::Classification => {
            let n_classes = data.n_classes.unwrap_or(pred.ncols());
            let truth: Vec<usize> = data.y.iter().map(|&c| c as usize).collect();
            eval::f1_macro(&nn::argmax_rows(pred.view()), &truth, n_classes)
        }
        Task::Regression => eval::r2(&pred.column(0).to_vec(), &data.y),
    }
}

/// Trains until early stopping or `max_epochs`, returning the parameters of
/// the best validation epoch.
pub fn train_model(
    mut model: MlpModel,
    mut gates: Option<GateState>,
    train: &EncodedMatrix,
    val: &EncodedMatrix,
    cleanliness: Option<&[f64]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = train.n_rows();
    if n == 0 {
        return Err(QuailError::invalid("empty training set"));
    }
    if train.width() != model.input_dim() || val.width() != model.input_dim() {
        return Err(QuailError::shape("encoded width does not match the model input"));
    }
    if let Some(gs) = &gates {
        if gs.width() != train.width() {
            return Err(QuailError::shape("gate width does not match the encoded width"));
        }
    }
    let curriculum = match (cfg.curriculum, cleanliness) {
        (Some(schedule), Some(c)) => {
            if c.len() != n {
                return Err(QuailError::shape("cleanliness length differs from the training rows"));
            }
            Some(CurriculumWeights::new(c.to_vec(), schedule))
        }
        (Some(schedule), None) => Some(CurriculumWeights::new(vec![1.0; n], schedule)),
        (None, _) => None,
    };

    let loss = loss_kind(train.task);
    let total = cfg.max_epochs;
    let mut optimizer = Optimizer::new(cfg.optimizer);
    let mut plateau = PlateauState::new(cfg.lr);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut order_rng = rng::stream(cfg.seed, tag::SHUFFLE, 0);
    let mut dropout_rng = rng::stream(cfg.seed, tag::DROPOUT, 0);
    let mut history = Vec::new();
    let mut best: Option<(MlpModel, Option<GateState>)> = None;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=total {
        let t = epoch - 1;
        let lr = lr_at(cfg.lr_schedule, cfg.lr, t, total, &plateau);
        let lambda = gates.as_ref().map_or(0.0, |gs| gs.lambda_at(t, total));

        let rows: Vec<usize> = match &curriculum {
            Some(cw) => {
                let probs = curriculum_probs(cw, t, total);
                let dist = WeightedIndex::new(&probs).map_err(|e| QuailError::invalid(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut order_rng)).collect()
            }
            None => {
                order.shuffle(&mut order_rng);
                order.clone()
            }
        };

        let (mut task_sum, mut gate_sum, mut batches) = (0.0, 0.0, 0usize);
        for batch in rows.chunks(cfg.batch_size) {
            let xb = train.x.select(ndarray::Axis(0), batch);
            let yb: Vec<f64> = batch.iter().map(|&r| train.y[r]).collect();
            let gated = match &gates {
                Some(gs) => quail::gate_forward(gs.g.view(), xb.view())?,
                None => xb.clone(),
            };
            let (pred, cache) = model.forward(gated.view(), true, dropout_rng.next_u64())?;
            let task_loss = nn::task_loss(pred.view(), &yb, loss)?;
            let mut grads = model.backward(&cache, &yb, loss)?;
            let gate_loss = gates.as_ref().map_or(0.0, GateState::loss);
            if !(task_loss.is_finite() && gate_loss.is_finite()) {
                return Err(QuailError::NonFinite(format!("training loss at epoch {epoch}")));
            }
            task_sum += task_loss;
            gate_sum += gate_loss;
            batches += 1;

            let gate_grad = gates.as_ref().map(|gs| {
                let mut gg = quail::gate_input_gradient(grads.input.view(), xb.view());
                quail::accumulate_gate_loss_gradient(&mut gg, gs.g.view(), gs.anchor.view(), gs.w.view(), lambda);
                gg
            });
            grads.gate = gate_grad;
            apply_step(&mut optimizer, &mut model, gates.as_mut(), &grads, lr, cfg.weight_decay)?;
        }

        let anchor_refreshed = match gates.as_mut() {
            Some(gs) => gs.maybe_refresh_anchor(epoch)?,
            None => false,
        };
        let val_metric = evaluate(&model, gates.as_ref(), val)?;
        let improved = stopper.observe(epoch, val_metric);
        if improved {
            best = Some((model.clone(), gates.clone()));
        }
        if cfg.lr_schedule == LrSchedule::Plateau {
            plateau.observe(improved);
        }
        let task_loss = task_sum / batches as f64;
        let gate_loss = gate_sum / batches as f64;
        history.push(EpochRecord {
            epoch,
            lr,
            lambda,
            train_loss: task_loss + lambda * gate_loss,
            task_loss,
            gate_loss,
            val_metric,
            anchor_refreshed,
            gates: gates.as_ref().map(|gs| gs.g.to_vec()),
        });
        if stopper.should_stop() {
            break;
        }
    }

    let (model, gates) = best.ok_or_else(|| QuailError::NonFinite("validation metric never finite".into()))?;
    Ok(TrainOutcome {
        model,
        gates,
        history,
        best_epoch: stopper.best_epoch,
        best_val: stopper.best.unwrap_or(f64::NAN),
    })
}

fn apply_step(
    optimizer: &mut Optimizer,
    model: &mut MlpModel,
    gates: Option<&mut GateState>,
    grads: &nn::ParamGrads,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    let mut slots = Vec::with_capacity(2 * model.layers.len() + 1);
    for (layer, (gw, gb)) in model.layers.iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
        slots.push(ParamSlot {
            value: layer.weight.view_mut().into_dyn(),
            grad: gw.view().into_dyn(),
            decay: true,
        });
        slots.push(ParamSlot {
            value: layer.bias.view_mut().into_dyn(),
            grad: gb.view().into_dyn(),
            decay: true,
        });
    }
    let empty = Array1::<f64>::zeros(0);
    if let Some(gs) = gates {
        let gg = grads.gate.as_ref().unwrap_or(&empty);
        slots.push(ParamSlot {
            value: gs.g.view_mut().into_dyn(),
            grad: gg.view().into_dyn(),
            decay: false,
        });
    }
    optimizer.step(&mut slots, lr, weight_decay)
}

/// Writes the history as `epoch,lr,lambda,train_loss,task_loss,gate_loss,val_metric`.
pub fn write_history_csv<W: std::io::Write>(history: &[EpochRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "lr", "lambda", "train_loss", "task_loss", "gate_loss", "val_metric"])?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.lr.to_string(),
            h.lambda.to_string(),
            h.train_loss.to_string(),
            h.task_loss.to_string(),
            h.gate_loss.to_string(),
            h.val_metric.to_string(),
        ])?;
    }
    w.flush().map_err(|e| QuailError::io("<history writer>", e))?;
    Ok(())
}

/// Writes the gate trajectory as `epoch,lambda,anchor_refreshed,g0,g1,...`.
pub fn write_gate_log_csv<W: std::io::Write>(history: &[EpochRecord], writer: W) -> Result<()> {
    let width = history.iter().find_map(|h| h.gates.as_ref().map(Vec::len)).unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["epoch".to_owned(), "lambda".to_owned(), "anchor_refreshed".to_owned()];
    header.extend((0..width).map(|j| format!("g{j}")));
    w.write_record(&header)?;
    for h in history {
        let Some(g) = &h.gates else { continue };
        let mut rec = vec![h.epoch.to_string(), h.lambda.to_string(), u8::from(h.anchor_refreshed).to_string()];
        rec.extend(g.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| QuailError::io("<gate log writer>", e))?;
    Ok(())
}
