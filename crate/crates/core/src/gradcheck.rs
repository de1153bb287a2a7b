//! Central finite-difference check of the composite loss
//! `task(f(g ⊙ x)) + λ · L_gate(g)` jointly over network parameters and gates.
//!
//! The numeric side only calls forward passes and loss evaluations, never
//! the backward pass it checks.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::Serialize;

use crate::error::Result;
use crate::nn::{self, Activation, LossKind, MlpModel, ParamGrads};
use crate::quail::{self, GateState, Phi};
use crate::rng;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-5;
pub const ABS_FLOOR: f64 = 1e-8;

/// One randomized problem: model, gates, batch and penalty strength.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: MlpModel,
    pub gates: GateState,
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub loss: LossKind,
    pub lambda: f64,
    pub dropout_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
    pub phi: Phi,
    pub lambda: f64,
    pub batch: usize,
    pub coordinates: usize,
    /// Largest |a − n| / max(|a|, |n|, ABS_FLOOR / REL_TOL).
    pub max_scaled_error: f64,
    pub failures: usize,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Builds a random problem from `seed`.
pub fn random_problem(seed: u64) -> Result<Problem> {
    let mut r = rng::stream(seed, rng::tag::SAMPLE, 0);
    let d = r.random_range(2..=6);
    let depth = r.random_range(0..=3);
    let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(2..=6)).collect();
    let activation = Activation::ALL[r.random_range(0..3)];
    let loss = if r.random_bool(0.5) { LossKind::CrossEntropy } else { LossKind::Mse };
    let out = match loss {
        LossKind::CrossEntropy => r.random_range(2..=4),
        LossKind::Mse => 1,
    };
    let dropout = if r.random_bool(0.5) { 0.3 } else { 0.0 };
    let mut model = MlpModel::new(d, &hidden, out, activation, dropout, &mut r)?;
    for layer in &mut model.layers {
        layer.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    let phi = Phi::ALL[r.random_range(0..4)];
    let q: Vec<f64> = (0..d).map(|_| r.random::<f64>()).collect();
    let w = quail::quality_weights(&q, phi)?;
    let g: Array1<f64> = (0..d).map(|_| r.random_range(-1.5..1.5)).collect();
    let anchor: Array1<f64> = (0..d).map(|_| r.random_range(-1.5..1.5)).collect();
    let gates = GateState {
        g,
        anchor,
        w,
        config: quail::GateConfig {
            init: quail::GateInit::Random,
            phi,
            lambda0: 1.0,
            anneal: quail::Anneal::Constant,
            t_anchor: 1,
        },
    };
    let lambda = 10f64.powf(r.random_range(-4.0..1.0));
    let batch = r.random_range(1..=8);
    let x = Array2::from_shape_simple_fn((batch, d), || r.random_range(-2.0..2.0));
    let y = (0..batch)
        .map(|_| match loss {
            LossKind::CrossEntropy => r.random_range(0..out) as f64,
            LossKind::Mse => r.random_range(-1.0..1.0),
        })
        .collect();
    Ok(Problem {
        model,
        gates,
        x,
        y,
        loss,
        lambda,
        dropout_seed: r.random(),
    })
}

impl Problem {
    pub fn composite_loss(&self, model: &MlpModel, g: &Array1<f64>) -> Result<f64> {
        let gated = quail::gate_forward(g.view(), self.x.view())?;
        let (pred, _) = model.forward(gated.view(), true, self.dropout_seed)?;
        let task = nn::task_loss(pred.view(), &self.y, self.loss)?;
        let gate = quail::try_gate_loss(g.view(), self.gates.anchor.view(), self.gates.w.view())?;
        Ok(task + self.lambda * gate)
    }

    /// Backward-pass gradient including dL/dg.
    pub fn analytic(&self) -> Result<ParamGrads> {
        let gated = quail::gate_forward(self.gates.g.view(), self.x.view())?;
        let (_, cache) = self.model.forward(gated.view(), true, self.dropout_seed)?;
        let mut grads = self.model.backward(&cache, &self.y, self.loss)?;
        let mut gg = quail::gate_input_gradient(grads.input.view(), self.x.view());
        quail::accumulate_gate_loss_gradient(
            &mut gg,
            self.gates.g.view(),
            self.gates.anchor.view(),
            self.gates.w.view(),
            self.lambda,
        );
        grads.gate = Some(gg);
        Ok(grads)
    }

    /// Pairs of (analytic, numeric) derivatives for every coordinate.
    pub fn compare(&self, h: f64) -> Result<Vec<(f64, f64)>> {
        let grads = self.analytic()?;
        let mut pairs = Vec::new();
        let g0 = &self.gates.g;
        for (li, layer) in self.model.layers.iter().enumerate() {
            for idx in 0..layer.weight.len() {
                let (r, c) = (idx / layer.fan_out(), idx % layer.fan_out());
                let numeric = central(h, |delta| {
                    let mut m = self.model.clone();
                    m.layers[li].weight[[r, c]] += delta;
                    self.composite_loss(&m, g0)
                })?;
                pairs.push((grads.weights[li][[r, c]], numeric));
            }
            for b in 0..layer.bias.len() {
                let numeric = central(h, |delta| {
                    let mut m = self.model.clone();
                    m.layers[li].bias[b] += delta;
                    self.composite_loss(&m, g0)
                })?;
                pairs.push((grads.biases[li][b], numeric));
            }
        }
        let gate_grad = grads.gate.expect("analytic sets the gate gradient");
        for j in 0..g0.len() {
            let numeric = central(h, |delta| {
                let mut g = g0.clone();
                g[j] += delta;
                self.composite_loss(&self.model, &g)
            })?;
            pairs.push((gate_grad[j], numeric));
        }
        Ok(pairs)
    }
}

fn central(h: f64, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    Ok((f(h)? - f(-h)?) / (2.0 * h))
}

pub fn scaled_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(ABS_FLOOR / REL_TOL);
    (analytic - numeric).abs() / scale
}

pub fn check_case(seed: u64) -> Result<CaseReport> {
    let p = random_problem(seed)?;
    let pairs = p.compare(STEP)?;
    let errors: Vec<f64> = pairs.iter().map(|&(a, n)| scaled_error(a, n)).collect();
    Ok(CaseReport {
        seed,
        hidden: p.model.layers[..p.model.n_hidden()].iter().map(|l| l.fan_out()).collect(),
        activation: p.model.activation,
        loss: p.loss,
        phi: p.gates.config.phi,
        lambda: p.lambda,
        batch: p.x.nrows(),
        coordinates: pairs.len(),
        max_scaled_error: errors.iter().copied().fold(0.0, f64::max),
        failures: errors.iter().filter(|&&e| e.is_nan() || e > REL_TOL).count(),
    })
}

/// Runs `n_cases` random problems derived from `seed`.
pub fn run(n_cases: usize, seed: u64) -> Result<Vec<CaseReport>> {
    (0..n_cases as u64)
        .map(|i| check_case(rng::derive_seed(seed, rng::tag::SAMPLE, i)))
        .collect()
}
