//! Corruption injectors for the training partition.
//!
//! Two modes: CCAR (value-independent Gaussian noise, uniform category swaps,
//! 30% of corrupted cells deleted) and CNAR (heteroscedastic noise in
//! min-max space, MNAR deletion of extreme values, propagation from anchor
//! columns, cyclic category confusion and rarity-driven missingness). Both
//! record a cell-level [`CorruptionMask`] from which feature quality scores
//! are derived.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{quantile_sorted, sample_std, Cell, ColumnKind, FeatureSchema, Table};
use crate::error::{QuailError, Result};
use crate::rng::{self, tag, Rng};

/// Fraction of value-corrupted cells turned into missing values under CCAR.
pub const CCAR_MISSING_FRACTION: f64 = 0.3;
/// σ divisor for CCAR noise: 10 ⇔ 20 dB.
pub const CCAR_NOISE_DIVISOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionMode {
    Clean,
    Ccar,
    Cnar,
}

impl CorruptionMode {
    pub const ALL: [CorruptionMode; 3] = [CorruptionMode::Clean, CorruptionMode::Ccar, CorruptionMode::Cnar];

    pub fn as_str(&self) -> &'static str {
        match self {
            CorruptionMode::Clean => "clean",
            CorruptionMode::Ccar => "ccar",
            CorruptionMode::Cnar => "cnar",
        }
    }
}

impl fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorruptionMode {
    type Err = QuailError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clean" => Ok(CorruptionMode::Clean),
            "ccar" => Ok(CorruptionMode::Ccar),
            "cnar" => Ok(CorruptionMode::Cnar),
            other => Err(QuailError::invalid(format!("unknown corruption mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Severe,
    Heavy,
    Moderate,
    Mild,
}

impl Tier {
    /// Probability that a cell of a column in this tier is corrupted.
    pub fn rate(self) -> f64 {
        match self {
            Tier::Severe => 0.40,
            Tier::Heavy => 0.20,
            Tier::Moderate => 0.10,
            Tier::Mild => 0.05,
        }
    }

    /// Share of input columns assigned to the tier (mild takes the rest).
    fn share(self) -> f64 {
        match self {
            Tier::Severe => 0.0625,
            Tier::Heavy => 0.125,
            Tier::Moderate => 0.25,
            Tier::Mild => 0.5625,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeverityPlan {
    /// Tier of each raw input column.
    pub tiers: Vec<Tier>,
    pub seed: u64,
}

impl SeverityPlan {
    pub fn rate(&self, col: usize) -> f64 {
        self.tiers[col].rate()
    }

    pub fn count(&self, tier: Tier) -> usize {
        self.tiers.iter().filter(|&&t| t == tier).count()
    }
}

/// Assigns severity tiers to a seeded shuffle of the input columns.
///
/// Severe, heavy and moderate counts are rounded up; columns run out before a
/// tier is filled only when D is very small.
pub fn plan_severity(schema: &FeatureSchema, seed: u64) -> SeverityPlan {
    let d = schema.n_inputs();
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng::stream(seed, tag::PLAN, 0));
    let mut tiers = vec![Tier::Mild; d];
    let mut next = 0;
    for tier in [Tier::Severe, Tier::Heavy, Tier::Moderate] {
        let want = (tier.share() * d as f64).ceil() as usize;
        for &col in order.iter().skip(next).take(want) {
            tiers[col] = tier;
        }
        next = (next + want).min(d);
    }
    SeverityPlan { tiers, seed }
}

/// Parameters of the CNAR injector. Defaults are the only values used in
/// experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnarConfig {
    pub anchor_fraction: f64,
    pub propagation_prob: f64,
    pub confusion_prob: f64,
    /// σ = σ_norm / 10^noise_exponent (0.75 ⇔ 15 dB).
    pub noise_exponent: f64,
    pub missing_cap: f64,
}

impl Default for CnarConfig {
    fn default() -> Self {
        CnarConfig {
            anchor_fraction: 1.0 / 3.0,
            propagation_prob: 0.60,
            confusion_prob: 0.70,
            noise_exponent: 0.75,
            missing_cap: 0.5,
        }
    }
}

impl CnarConfig {
    fn validate(&self) -> Result<()> {
        let probs = [self.anchor_fraction, self.propagation_prob, self.confusion_prob, self.missing_cap];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || !self.noise_exponent.is_finite() {
            return Err(QuailError::invalid(format!("invalid CNAR configuration {self:?}")));
        }
        Ok(())
    }
}

/// Cell-level record of injected corruption over one training table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionMask {
    pub n_rows: usize,
    pub n_cols: usize,
    pub corrupted: Vec<bool>,
    pub made_missing: Vec<bool>,
    pub mode: CorruptionMode,
    /// CNAR propagation anchors (raw column indices); empty otherwise.
    pub anchors: Vec<usize>,
}

impl CorruptionMask {
    pub fn empty(n_rows: usize, n_cols: usize, mode: CorruptionMode) -> Self {
        CorruptionMask {
            n_rows,
            n_cols,
            corrupted: vec![false; n_rows * n_cols],
            made_missing: vec![false; n_rows * n_cols],
            mode,
            anchors: Vec::new(),
        }
    }

    pub fn is_corrupted(&self, row: usize, col: usize) -> bool {
        self.corrupted[row * self.n_cols + col]
    }

    pub fn is_made_missing(&self, row: usize, col: usize) -> bool {
        self.made_missing[row * self.n_cols + col]
    }

    fn mark(&mut self, row: usize, col: usize, missing: bool) {
        let i = row * self.n_cols + col;
        self.corrupted[i] = true;
        self.made_missing[i] |= missing;
    }

    pub fn corrupted_in_column(&self, col: usize) -> usize {
        (0..self.n_rows).filter(|&r| self.is_corrupted(r, col)).count()
    }

    pub fn missing_in_column(&self, col: usize) -> usize {
        (0..self.n_rows).filter(|&r| self.is_made_missing(r, col)).count()
    }

    pub fn total_corrupted(&self) -> usize {
        self.corrupted.iter().filter(|&&c| c).count()
    }

    /// Fraction of uncorrupted cells in each row.
    pub fn row_cleanliness(&self) -> Vec<f64> {
        if self.n_cols == 0 {
            return vec![1.0; self.n_rows];
        }
        (0..self.n_rows)
            .map(|r| {
                let bad = (0..self.n_cols).filter(|&c| self.is_corrupted(r, c)).count();
                1.0 - bad as f64 / self.n_cols as f64
            })
            .collect()
    }

    /// Writes corrupted cells as `row,column,corrupted,made_missing` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "column", "corrupted", "made_missing"])?;
        for r in 0..self.n_rows {
            for c in 0..self.n_cols {
                if self.is_corrupted(r, c) {
                    w.write_record([
                        r.to_string(),
                        c.to_string(),
                        "1".to_owned(),
                        u8::from(self.is_made_missing(r, c)).to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| QuailError::io("<mask writer>", e))?;
        Ok(())
    }
}

/// Per-raw-column reliability scores in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityVector {
    pub q: Vec<f64>,
}

impl QualityVector {
    pub fn ones(d: usize) -> Self {
        QualityVector { q: vec![1.0; d] }
    }
}

/// q_j = 1 − (corrupted cells in column j) / n_train_rows.
pub fn derive_quality(mask: &CorruptionMask, n_train_rows: usize) -> Result<QualityVector> {
    if n_train_rows == 0 {
        return Err(QuailError::invalid("quality needs at least one training row"));
    }
    if mask.n_rows != n_train_rows || mask.corrupted.len() != mask.n_rows * mask.n_cols {
        return Err(QuailError::shape(format!(
            "mask of {} rows for {n_train_rows} training rows",
            mask.n_rows
        )));
    }
    let q = (0..mask.n_cols)
        .map(|c| (1.0 - mask.corrupted_in_column(c) as f64 / n_train_rows as f64).clamp(0.0, 1.0))
        .collect();
    Ok(QualityVector { q })
}

fn check_plan(train: &Table, plan: &SeverityPlan) -> Result<()> {
    if plan.tiers.len() != train.n_cols() {
        return Err(QuailError::shape(format!(
            "severity plan covers {} columns, table has {}",
            plan.tiers.len(),
            train.n_cols()
        )));
    }
    Ok(())
}

/// Corruption Completely At Random.
pub fn corrupt_ccar(train: &Table, plan: &SeverityPlan, seed: u64) -> Result<(Table, CorruptionMask)> {
    check_plan(train, plan)?;
    let n = train.n_rows();
    let mut out = train.clone();
    let mut mask = CorruptionMask::empty(n, train.n_cols(), CorruptionMode::Ccar);
    for (j, col) in train.schema().columns.iter().enumerate() {
        let mut rng = rng::stream(seed, tag::CCAR, j as u64);
        let p = plan.rate(j);
        let sigma = sample_std(&train.numeric_values(j)) / CCAR_NOISE_DIVISOR;
        let k = col.categories.len();
        let mut selected = Vec::new();
        for r in 0..n {
            let cell = train.cell(r, j);
            if cell.is_missing() || rng.random::<f64>() >= p {
                continue;
            }
            selected.push(r);
            let new = match cell {
                Cell::Num(v) => {
                    let eps: f64 = rng.sample(StandardNormal);
                    Cell::Num(v + sigma * eps)
                }
                Cell::Cat(c) if k > 1 => {
                    // Uniform over the k − 1 other categories.
                    let pick = rng.random_range(0..k as u32 - 1);
                    Cell::Cat(if pick >= c { pick + 1 } else { pick })
                }
                other => other,
            };
            out.set_cell(r, j, new);
            mask.mark(r, j, false);
        }
        let n_missing = (CCAR_MISSING_FRACTION * selected.len() as f64).floor() as usize;
        for i in index::sample(&mut rng, selected.len(), n_missing) {
            let r = selected[i];
            out.set_cell(r, j, Cell::Missing);
            mask.mark(r, j, true);
        }
    }
    Ok((out, mask))
}

/// Min-max geometry of a numeric column, used by CNAR noise.
#[derive(Debug, Clone, Copy)]
struct NumericProfile {
    min: f64,
    range: f64,
    /// Standard deviation of the min-max normalized column.
    sigma_norm: f64,
    median: f64,
    iqr: f64,
}

impl NumericProfile {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let min = sorted[0];
        let range = sorted[sorted.len() - 1] - min;
        let sigma_norm = if range > 0.0 { sample_std(values) / range } else { 0.0 };
        Some(NumericProfile {
            min,
            range,
            sigma_norm,
            median: quantile_sorted(&sorted, 0.5),
            iqr: quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
        })
    }

    fn normalize(&self, x: f64) -> f64 {
        if self.range > 0.0 {
            (x - self.min) / self.range
        } else {
            0.0
        }
    }

    fn denormalize(&self, u: f64) -> f64 {
        self.min + u * self.range
    }
}

/// Heteroscedastic perturbation u + (1 + 3u)·ε in normalized space.
fn heteroscedastic(u: f64, sigma: f64, z: f64) -> f64 {
    u + (1.0 + 3.0 * u) * sigma * z
}

/// MNAR deletion probability min(cap, |x − median|·p / (2·IQR)); zero when IQR = 0.
pub fn mnar_missing_prob(x: f64, median: f64, iqr: f64, p: f64, cap: f64) -> f64 {
    if iqr <= 0.0 {
        return 0.0;
    }
    ((x - median).abs() * p / (2.0 * iqr)).min(cap)
}

/// Corruption Not At Random.
pub fn corrupt_cnar(
    train: &Table,
    plan: &SeverityPlan,
    cfg: &CnarConfig,
    seed: u64,
) -> Result<(Table, CorruptionMask)> {
    check_plan(train, plan)?;
    cfg.validate()?;
    let n = train.n_rows();
    let d = train.n_cols();
    let noise_div = 10f64.powf(cfg.noise_exponent);
    let mut out = train.clone();
    let mut mask = CorruptionMask::empty(n, d, CorruptionMode::Cnar);

    let numeric: Vec<usize> = (0..d).filter(|&j| train.schema().columns[j].is_numeric()).collect();
    let profiles: Vec<Option<NumericProfile>> = (0..d)
        .map(|j| {
            if train.schema().columns[j].is_numeric() {
                NumericProfile::of(&train.numeric_values(j))
            } else {
                None
            }
        })
        .collect();

    // Primary corruption, one RNG stream per column.
    for (j, col) in train.schema().columns.iter().enumerate() {
        let mut rng = rng::stream(seed, tag::CNAR, j as u64);
        let p = plan.rate(j);
        match col.kind {
            ColumnKind::Numeric => {
                let Some(prof) = profiles[j] else { continue };
                let sigma = prof.sigma_norm / noise_div;
                for r in 0..n {
                    let Cell::Num(x) = train.cell(r, j) else { continue };
                    let noised = rng.random::<f64>() < p;
                    let z: f64 = if noised { rng.sample(StandardNormal) } else { 0.0 };
                    let delete = rng.random::<f64>()
                        < mnar_missing_prob(x, prof.median, prof.iqr, p, cfg.missing_cap);
                    if delete {
                        out.set_cell(r, j, Cell::Missing);
                        mask.mark(r, j, true);
                    } else if noised {
                        let u = prof.normalize(x);
                        out.set_cell(r, j, Cell::Num(prof.denormalize(heteroscedastic(u, sigma, z))));
                        mask.mark(r, j, false);
                    }
                }
            }
            ColumnKind::Categorical => {
                let k = col.categories.len();
                let mut counts = vec![0usize; k];
                for c in train.column(j).filter_map(|c| c.as_cat()) {
                    counts[c as usize] += 1;
                }
                let total: usize = counts.iter().sum();
                for r in 0..n {
                    let Cell::Cat(c) = train.cell(r, j) else { continue };
                    let swapped = rng.random::<f64>() < p;
                    let new = if swapped { confuse(c, k, cfg.confusion_prob, &mut rng) } else { c };
                    let freq = counts[c as usize] as f64 / total as f64;
                    let delete = rng.random::<f64>() < p * (1.0 - freq);
                    if delete {
                        out.set_cell(r, j, Cell::Missing);
                        mask.mark(r, j, true);
                    } else if swapped {
                        out.set_cell(r, j, Cell::Cat(new));
                        mask.mark(r, j, false);
                    }
                }
            }
        }
    }

    // Propagation from anchor columns to the other numeric columns.
    let mut shuffled = numeric.clone();
    shuffled.shuffle(&mut rng::stream(seed, tag::CNAR_ANCHORS, 0));
    let n_anchors = (cfg.anchor_fraction * numeric.len() as f64).ceil() as usize;
    let mut anchors: Vec<usize> = shuffled.into_iter().take(n_anchors).collect();
    anchors.sort_unstable();
    let primary = mask.clone();
    for &v in &numeric {
        let Some(prof) = profiles[v] else { continue };
        let sigma = prof.sigma_norm / noise_div;
        let mut rng = rng::stream(seed, tag::CNAR_PROPAGATE, v as u64);
        for r in 0..n {
            let mut hit = false;
            for &a in anchors.iter().filter(|&&a| a != v) {
                if primary.is_corrupted(r, a) {
                    hit |= rng.random::<f64>() < cfg.propagation_prob;
                }
            }
            if !hit || mask.is_corrupted(r, v) {
                continue;
            }
            let Cell::Num(x) = out.cell(r, v) else { continue };
            let z: f64 = rng.sample(StandardNormal);
            let u = prof.normalize(x);
            out.set_cell(r, v, Cell::Num(prof.denormalize(heteroscedastic(u, sigma, z))));
            mask.mark(r, v, false);
        }
    }
    mask.anchors = anchors;
    Ok((out, mask))
}

/// Systematic confusion: c → (c + 1) mod k with probability `confusion_prob`,
/// otherwise uniform over categories other than c and its cyclic successor
/// (which leaves only the successor when k = 2).
fn confuse(c: u32, k: usize, confusion_prob: f64, rng: &mut Rng) -> u32 {
    if k < 2 {
        return c;
    }
    let k = k as u32;
    let next = (c + 1) % k;
    let cyclic = rng.random::<f64>() < confusion_prob;
    if cyclic || k == 2 {
        return next;
    }
    // Offsets 2..k from c enumerate every category except c and next.
    let offset = rng.random_range(2..k);
    (c + offset) % k
}

/// Everything produced by corrupting one training table.
#[derive(Debug, Clone)]
pub struct Corrupted {
    pub table: Table,
    pub mask: CorruptionMask,
    pub plan: Option<SeverityPlan>,
    pub quality: QualityVector,
}

/// Plans severity, injects the requested corruption and derives q.
/// `Clean` returns the input unchanged with an empty mask and q = 1.
pub fn corrupt_table(train: &Table, mode: CorruptionMode, seed: u64) -> Result<Corrupted> {
    let n = train.n_rows();
    let d = train.n_cols();
    if mode == CorruptionMode::Clean {
        return Ok(Corrupted {
            table: train.clone(),
            mask: CorruptionMask::empty(n, d, mode),
            plan: None,
            quality: QualityVector::ones(d),
        });
    }
    let plan = plan_severity(train.schema(), seed);
    let (table, mask) = match mode {
        CorruptionMode::Ccar => corrupt_ccar(train, &plan, seed)?,
        CorruptionMode::Cnar => corrupt_cnar(train, &plan, &CnarConfig::default(), seed)?,
        CorruptionMode::Clean => unreachable!(),
    };
    let quality = if n == 0 { QualityVector::ones(d) } else { derive_quality(&mask, n)? };
    Ok(Corrupted {
        table,
        mask,
        plan: Some(plan),
        quality,
    })
}
