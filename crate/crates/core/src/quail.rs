//! Quality-aware gating.
//!
//! Every encoded input column j is scaled by a learnable gate g_j. The gate is
//! pulled toward an anchor copy of itself by the penalty
//!
//! ```text
//! L_gate = (1/D') Σ_j w_j (g_j − anchor_j)²,   w_j = φ(1 − q_j)
//! ```
//!
//! so features with low quality q_j move slowly (high inertia) while clean
//! features adapt freely. The anchor is re-synchronised with g every
//! `t_anchor` epochs and the penalty strength λ may be annealed.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{QuailError, Result};
use crate::rng::{self, tag};

/// Weighting function φ mapping unreliability z = 1 − q to a penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    Linear,
    Quadratic,
    Exponential,
    InverseExponential,
}

impl Phi {
    pub const ALL: [Phi; 4] = [Phi::Linear, Phi::Quadratic, Phi::Exponential, Phi::InverseExponential];

    pub fn eval(self, z: f64) -> f64 {
        match self {
            Phi::Linear => z,
            Phi::Quadratic => z * z,
            Phi::Exponential => (2.0 * z).exp_m1(),
            Phi::InverseExponential => -(-2.0 * z).exp_m1(),
        }
    }
}

impl FromStr for Phi {
    type Err = QuailError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Phi::Linear),
            "quadratic" => Ok(Phi::Quadratic),
            "exponential" => Ok(Phi::Exponential),
            "inverse_exponential" => Ok(Phi::InverseExponential),
            other => Err(QuailError::invalid(format!("unknown weighting function {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Anneal {
    Constant,
    Linear,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateInit {
    Quality,
    Random,
    Ones,
}

impl fmt::Display for GateInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateInit::Quality => "quality",
            GateInit::Random => "random",
            GateInit::Ones => "ones",
        })
    }
}

/// Hyperparameters of the gating layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub init: GateInit,
    pub phi: Phi,
    pub lambda0: f64,
    pub anneal: Anneal,
    pub t_anchor: usize,
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0.is_finite() && self.lambda0 >= 0.0) {
            return Err(QuailError::invalid(format!("lambda0 must be finite and >= 0, got {}", self.lambda0)));
        }
        if self.t_anchor < 1 {
            return Err(QuailError::invalid("t_anchor must be at least 1"));
        }
        Ok(())
    }
}

/// Gate vector, its anchor and the per-gate penalty weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GateState {
    pub g: Array1<f64>,
    pub anchor: Array1<f64>,
    pub w: Array1<f64>,
    pub config: GateConfig,
}

impl GateState {
    /// Initializes gates and weights from encoded-space quality scores.
    pub fn new(config: GateConfig, q_expanded: &[f64], seed: u64) -> Result<Self> {
        config.validate()?;
        let w = quality_weights(q_expanded, config.phi)?;
        let (g, anchor) = init_gates(config.init, q_expanded, seed);
        Ok(GateState { g, anchor, w, config })
    }

    pub fn width(&self) -> usize {
        self.g.len()
    }

    pub fn loss(&self) -> f64 {
        gate_loss(self.g.view(), self.anchor.view(), self.w.view())
    }

    /// Copies g into the anchor when `epoch` is a multiple of `t_anchor`.
    /// Returns whether a refresh happened.
    pub fn maybe_refresh_anchor(&mut self, epoch: usize) -> Result<bool> {
        if self.config.t_anchor < 1 {
            return Err(QuailError::invalid("t_anchor must be at least 1"));
        }
        if epoch >= 1 && epoch.is_multiple_of(self.config.t_anchor) {
            self.anchor.assign(&self.g);
            Ok(true)
        } else {
            Ok(false)
        }
    }

    pub fn lambda_at(&self, t: usize, total: usize) -> f64 {
        lambda_at(self.config.lambda0, self.config.anneal, t, total)
    }
}

/// Broadcasts per-raw-column quality to encoded columns.
pub fn expand_quality(q: &[f64], feature_of_encoded: &[usize]) -> Result<Vec<f64>> {
    feature_of_encoded
        .iter()
        .map(|&j| {
            q.get(j)
                .copied()
                .ok_or_else(|| QuailError::shape(format!("encoded column maps to raw column {j} without a quality score")))
        })
        .collect()
}

/// x̃ = g ⊙ x, row by row.
pub fn gate_forward(g: ArrayView1<f64>, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if g.len() != x.ncols() {
        return Err(QuailError::shape(format!("{} gates for {} columns", g.len(), x.ncols())));
    }
    Ok(&x * &g)
}

/// dL/dg_j = Σ_i dL/dx̃_ij · x_ij.
pub fn gate_input_gradient(d_gated: ArrayView2<f64>, x: ArrayView2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(x.ncols());
    Zip::from(d_gated.rows()).and(x.rows()).for_each(|d, xr| {
        Zip::from(&mut out).and(&d).and(&xr).for_each(|o, &dv, &xv| *o += dv * xv);
    });
    out
}

/// w_j = φ(1 − q_j).
pub fn quality_weights(q_expanded: &[f64], phi: Phi) -> Result<Array1<f64>> {
    if let Some(bad) = q_expanded.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(QuailError::invalid(format!("quality score {bad} outside [0, 1]")));
    }
    Ok(q_expanded.iter().map(|&q| phi.eval(1.0 - q)).collect())
}

/// (1/D') Σ_j w_j (g_j − anchor_j)². Panics on length mismatch; see
/// [`try_gate_loss`].
pub fn gate_loss(g: ArrayView1<f64>, anchor: ArrayView1<f64>, w: ArrayView1<f64>) -> f64 {
    try_gate_loss(g, anchor, w).expect("gate vectors must have equal lengths")
}

pub fn try_gate_loss(g: ArrayView1<f64>, anchor: ArrayView1<f64>, w: ArrayView1<f64>) -> Result<f64> {
    if g.len() != anchor.len() || g.len() != w.len() {
        return Err(QuailError::shape(format!(
            "gate lengths differ: g {}, anchor {}, w {}",
            g.len(),
            anchor.len(),
            w.len()
        )));
    }
    if g.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = Zip::from(&g)
        .and(&anchor)
        .and(&w)
        .fold(0.0, |acc, &gj, &aj, &wj| acc + wj * (gj - aj) * (gj - aj));
    Ok(sum / g.len() as f64)
}

/// Adds `scale · dL_gate/dg` into `grad`. Gates with zero weight are left
/// untouched so a zero penalty contributes exactly nothing.
pub fn accumulate_gate_loss_gradient(
    grad: &mut Array1<f64>,
    g: ArrayView1<f64>,
    anchor: ArrayView1<f64>,
    w: ArrayView1<f64>,
    scale: f64,
) {
    if scale == 0.0 {
        return;
    }
    let d = g.len() as f64;
    Zip::from(grad).and(&g).and(&anchor).and(&w).for_each(|gr, &gj, &aj, &wj| {
        if wj != 0.0 {
            *gr += scale * 2.0 * wj * (gj - aj) / d;
        }
    });
}

/// Penalty strength at epoch `t` of `total`.
pub fn lambda_at(lambda0: f64, anneal: Anneal, t: usize, total: usize) -> f64 {
    let frac = t as f64 / total.max(1) as f64;
    match anneal {
        Anneal::Constant => lambda0,
        Anneal::Linear => lambda0 * (1.0 - frac),
        Anneal::Cosine => lambda0 * (1.0 + (PI * frac).cos()) / 2.0,
    }
}

/// Initial gates and anchor (the anchor starts as an exact copy).
pub fn init_gates(init: GateInit, q_expanded: &[f64], seed: u64) -> (Array1<f64>, Array1<f64>) {
    let g: Array1<f64> = match init {
        GateInit::Quality => Array1::from(q_expanded.to_vec()),
        GateInit::Ones => Array1::ones(q_expanded.len()),
        GateInit::Random => {
            let mut rng = rng::stream(seed, tag::GATE_INIT, 0);
            (0..q_expanded.len()).map(|_| rng.random::<f64>()).collect()
        }
    };
    let anchor = g.clone();
    (g, anchor)
}
