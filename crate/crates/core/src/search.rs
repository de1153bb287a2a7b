//! Random hyperparameter search over the experiment space, top-k
//! architecture restriction for QuAIL studies, the per-trial bootstrap
//! protocol and the append-only study ledger.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrupt::{self, Corrupted, CorruptionMode};
use crate::data::{self, Split, Table, Task};
use crate::error::{QuailError, Result};
use crate::nn::{Activation, MlpModel};
use crate::quail::{self, Anneal, GateConfig, GateInit, GateState, Phi};
use crate::rng::{self, tag, Rng};
use crate::train::{self, CurriculumSchedule, LrSchedule, OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Mlp,
    Curriculum,
    Quail,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Linear, ModelKind::Mlp, ModelKind::Curriculum, ModelKind::Quail];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Mlp => "mlp",
            ModelKind::Curriculum => "curriculum",
            ModelKind::Quail => "quail",
        }
    }

    pub fn rank(&self) -> usize {
        *self as usize
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = QuailError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(ModelKind::Linear),
            "mlp" => Ok(ModelKind::Mlp),
            "curriculum" => Ok(ModelKind::Curriculum),
            "quail" => Ok(ModelKind::Quail),
            other => Err(QuailError::invalid(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Ranges of every searched hyperparameter. Intervals are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    /// Log-uniform.
    pub lr: (f64, f64),
    pub batch_size: Vec<usize>,
    pub optimizer: Vec<OptimizerKind>,
    /// Log-uniform.
    pub weight_decay: (f64, f64),
    pub lr_schedule: Vec<LrSchedule>,
    pub hidden_layers: (usize, usize),
    pub width: Vec<usize>,
    pub dropout: (f64, f64),
    pub activation: Vec<Activation>,
    pub curriculum: Vec<CurriculumSchedule>,
    pub gate_init: Vec<GateInit>,
    /// Log-uniform.
    pub lambda0: (f64, f64),
    pub t_anchor: (usize, usize),
    pub phi: Vec<Phi>,
    pub anneal: Vec<Anneal>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr: (5e-4, 5e-2),
            batch_size: vec![64, 128, 256],
            optimizer: vec![OptimizerKind::Sgd, OptimizerKind::Adam, OptimizerKind::AdamW],
            weight_decay: (1e-6, 1e-2),
            lr_schedule: vec![LrSchedule::Plateau, LrSchedule::Cosine, LrSchedule::Step],
            hidden_layers: (1, 4),
            width: vec![4, 8, 16, 32, 64],
            dropout: (0.0, 0.5),
            activation: Activation::ALL.to_vec(),
            curriculum: vec![CurriculumSchedule::Linear, CurriculumSchedule::Exponential, CurriculumSchedule::Step],
            gate_init: vec![GateInit::Quality, GateInit::Random, GateInit::Ones],
            lambda0: (1e-4, 1e-1),
            t_anchor: (1, 20),
            phi: Phi::ALL.to_vec(),
            anneal: vec![Anneal::Constant, Anneal::Linear, Anneal::Cosine],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let log_range = |name: &str, (lo, hi): (f64, f64)| {
            if lo > 0.0 && lo <= hi && hi.is_finite() {
                Ok(())
            } else {
                Err(QuailError::invalid(format!("{name} range ({lo}, {hi}) must be positive and ordered")))
            }
        };
        log_range("lr", self.lr)?;
        log_range("weight_decay", self.weight_decay)?;
        log_range("lambda0", self.lambda0)?;
        if !(0.0 <= self.dropout.0 && self.dropout.0 <= self.dropout.1 && self.dropout.1 <= 0.5) {
            return Err(QuailError::invalid("dropout range must lie within [0, 0.5]"));
        }
        if self.hidden_layers.0 < 1 || self.hidden_layers.0 > self.hidden_layers.1 {
            return Err(QuailError::invalid("hidden layer range must be ordered and start at 1 or more"));
        }
        if self.t_anchor.0 < 1 || self.t_anchor.0 > self.t_anchor.1 {
            return Err(QuailError::invalid("t_anchor range must be ordered and start at 1 or more"));
        }
        let empty = self.batch_size.is_empty()
            || self.optimizer.is_empty()
            || self.lr_schedule.is_empty()
            || self.width.is_empty()
            || self.activation.is_empty()
            || self.curriculum.is_empty()
            || self.gate_init.is_empty()
            || self.phi.is_empty()
            || self.anneal.is_empty();
        if empty {
            return Err(QuailError::invalid("categorical search dimensions must be non-empty"));
        }
        if self.batch_size.contains(&0) || self.width.contains(&0) {
            return Err(QuailError::invalid("batch sizes and widths must be positive"));
        }
        Ok(())
    }
}

/// MLP shape: `hidden_layers` layers of equal `width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden_layers: usize,
    pub width: usize,
    pub dropout: f64,
    pub activation: Activation,
}

impl Architecture {
    fn key(&self) -> (usize, usize, u64, Activation) {
        (self.hidden_layers, self.width, self.dropout.to_bits(), self.activation)
    }

    pub fn hidden(&self) -> Vec<usize> {
        vec![self.width; self.hidden_layers]
    }
}

/// A fully specified trial: model family, architecture and training setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub model: ModelKind,
    /// Absent for the linear model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<Architecture>,
    pub train: TrainConfig,
}

fn log_uniform(r: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    r.random_range(lo.ln()..=hi.ln()).exp()
}

fn pick<T: Copy>(r: &mut Rng, items: &[T]) -> T {
    items[r.random_range(0..items.len())]
}

fn uniform(r: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        r.random_range(lo..=hi)
    }
}

fn sample_gate_config(space: &SearchSpace, r: &mut Rng) -> (GateConfig, Option<CurriculumSchedule>) {
    let gates = GateConfig {
        init: pick(r, &space.gate_init),
        lambda0: log_uniform(r, space.lambda0),
        t_anchor: r.random_range(space.t_anchor.0..=space.t_anchor.1),
        phi: pick(r, &space.phi),
        anneal: pick(r, &space.anneal),
    };
    let curriculum = if r.random_bool(0.5) { Some(pick(r, &space.curriculum)) } else { None };
    (gates, curriculum)
}

/// Draws every field relevant to `model` independently from `space`.
pub fn sample_config(space: &SearchSpace, model: ModelKind, seed: u64, max_epochs: usize, patience: usize) -> TrialConfig {
    let mut r = rng::stream(seed, tag::SAMPLE, model.rank() as u64);
    let lr = log_uniform(&mut r, space.lr);
    let batch_size = pick(&mut r, &space.batch_size);
    let optimizer = pick(&mut r, &space.optimizer);
    let weight_decay = log_uniform(&mut r, space.weight_decay);
    let lr_schedule = pick(&mut r, &space.lr_schedule);
    let arch = (model != ModelKind::Linear).then(|| Architecture {
        hidden_layers: r.random_range(space.hidden_layers.0..=space.hidden_layers.1),
        width: pick(&mut r, &space.width),
        dropout: uniform(&mut r, space.dropout),
        activation: pick(&mut r, &space.activation),
    });
    let (quail, curriculum) = match model {
        ModelKind::Linear | ModelKind::Mlp => (None, None),
        ModelKind::Curriculum => (None, Some(pick(&mut r, &space.curriculum))),
        ModelKind::Quail => {
            let (g, c) = sample_gate_config(space, &mut r);
            (Some(g), c)
        }
    };
    TrialConfig {
        model,
        arch,
        train: TrainConfig {
            lr,
            batch_size,
            optimizer,
            weight_decay,
            lr_schedule,
            max_epochs,
            patience,
            quail,
            curriculum,
            seed: rng::derive_seed(seed, tag::TRIAL, model.rank() as u64),
        },
    }
}

/// QuAIL trial restricted to a pool of baseline configurations: the
/// architecture and optimizer setup come from a uniformly chosen pool entry,
/// only the gate hyperparameters (and optional curriculum) are sampled.
pub fn sample_quail_config(space: &SearchSpace, pool: &[RankedArchitecture], seed: u64) -> Result<TrialConfig> {
    if pool.is_empty() {
        return Err(QuailError::invalid("empty architecture pool"));
    }
    let mut r = rng::stream(seed, tag::SAMPLE, ModelKind::Quail.rank() as u64);
    let base = &pool[r.random_range(0..pool.len())];
    let (gates, curriculum) = sample_gate_config(space, &mut r);
    Ok(TrialConfig {
        model: ModelKind::Quail,
        arch: Some(base.arch),
        train: TrainConfig {
            quail: Some(gates),
            curriculum,
            seed: rng::derive_seed(seed, tag::TRIAL, ModelKind::Quail.rank() as u64),
            ..base.train.clone()
        },
    })
}

/// Outcome of one trial over all bootstrap splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub split_seed: u64,
    pub config: TrialConfig,
    pub val: Vec<f64>,
    pub test: Vec<f64>,
    pub val_mean: Option<f64>,
    pub test_mean: Option<f64>,
    pub best_epochs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialResult {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.val_mean.is_some_and(f64::is_finite)
    }
}

/// A baseline configuration retained for QuAIL studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedArchitecture {
    pub arch: Architecture,
    pub train: TrainConfig,
    pub source_trial: usize,
    pub val_mean: f64,
}

/// The `k` distinct architectures with the highest mean validation metric,
/// ties broken by the earlier trial. Returns fewer (with a warning) when not
/// enough distinct architectures exist.
pub fn top_k_architectures(trials: &[TrialResult], k: usize) -> Vec<RankedArchitecture> {
    let mut ranked: Vec<&TrialResult> = trials
        .iter()
        .filter(|t| t.succeeded() && t.config.arch.is_some())
        .collect();
    ranked.sort_by(|a, b| {
        b.val_mean
            .unwrap_or(f64::NEG_INFINITY)
            .total_cmp(&a.val_mean.unwrap_or(f64::NEG_INFINITY))
            .then(a.index.cmp(&b.index))
    });
    let mut seen = HashSet::new();
    let out: Vec<RankedArchitecture> = ranked
        .into_iter()
        .filter_map(|t| {
            let arch = t.config.arch.expect("filtered above");
            seen.insert(arch.key()).then(|| RankedArchitecture {
                arch,
                train: t.config.train.clone(),
                source_trial: t.index,
                val_mean: t.val_mean.unwrap_or(f64::NAN),
            })
        })
        .take(k)
        .collect();
    if out.len() < k {
        log::warn!("only {} distinct architectures available, {k} requested", out.len());
    }
    out
}

/// Training, validation and test tables of one split, with corruption
/// applied to the training rows only.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub train: Table,
    pub val: Table,
    pub test: Table,
    pub corruption: Corrupted,
}

pub fn prepare_split(table: &Table, split: &Split, mode: CorruptionMode, seed: u64) -> Result<PreparedSplit> {
    let clean_train = table.select_rows(&split.train_idx);
    let corruption = corrupt::corrupt_table(&clean_train, mode, seed)?;
    Ok(PreparedSplit {
        train: corruption.table.clone(),
        val: table.select_rows(&split.val_idx),
        test: table.select_rows(&split.test_idx),
        corruption,
    })
}

/// Called with (trial index, split index, split, prepared tables) for every
/// split a study evaluates.
pub type SplitInspector<'a> = dyn Fn(usize, usize, &Split, &PreparedSplit) + Sync + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialEval {
    pub val: Vec<f64>,
    pub test: Vec<f64>,
    pub best_epochs: Vec<usize>,
}

/// Runs the bootstrap protocol for one configuration.
pub fn evaluate_trial(
    table: &Table,
    mode: CorruptionMode,
    config: &TrialConfig,
    split_seed: u64,
    n_splits: usize,
    inspect: Option<(&SplitInspector<'_>, usize)>,
) -> Result<TrialEval> {
    let splits = data::make_bootstrap_splits(table.n_rows(), n_splits, split_seed)?;
    let mut out = TrialEval {
        val: Vec::with_capacity(n_splits),
        test: Vec::with_capacity(n_splits),
        best_epochs: Vec::with_capacity(n_splits),
    };
    let out_dim = match table.schema().target.task {
        Task::Classification => table.schema().target.classes.len(),
        Task::Regression => 1,
    };
    for (s, split) in splits.iter().enumerate() {
        let prepared = prepare_split(table, split, mode, rng::derive_seed(split.seed, tag::CORRUPT, 0))?;
        if let Some((f, trial)) = inspect {
            f(trial, s, split, &prepared);
        }
        let pre = data::fit_preprocessor(&prepared.train)?;
        let train_m = data::apply_preprocessor(&pre, &prepared.train)?;
        let val_m = data::apply_preprocessor(&pre, &prepared.val)?;
        let test_m = data::apply_preprocessor(&pre, &prepared.test)?;

        let split_train_seed = rng::derive_seed(config.train.seed, tag::SHUFFLE, s as u64);
        let mut init_rng = rng::stream(split_train_seed, tag::MODEL_INIT, 0);
        let (hidden, activation, dropout) = match &config.arch {
            Some(a) => (a.hidden(), a.activation, a.dropout),
            None => (Vec::new(), Activation::Relu, 0.0),
        };
        let model = MlpModel::new(train_m.width(), &hidden, out_dim, activation, dropout, &mut init_rng)?;
        let gates = match &config.train.quail {
            Some(gc) => {
                let q = quail::expand_quality(&prepared.corruption.quality.q, &train_m.feature_of_encoded)?;
                Some(GateState::new(*gc, &q, split_train_seed)?)
            }
            None => None,
        };
        let cleanliness = prepared.corruption.mask.row_cleanliness();
        let cfg = TrainConfig {
            seed: split_train_seed,
            ..config.train.clone()
        };
        let outcome = train::train_model(model, gates, &train_m, &val_m, Some(&cleanliness), &cfg)?;
        out.val.push(outcome.best_val);
        out.test.push(train::evaluate(&outcome.model, outcome.gates.as_ref(), &test_m)?);
        out.best_epochs.push(outcome.best_epoch);
    }
    Ok(out)
}

/// Study budget and protocol constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub n_trials: usize,
    pub n_splits: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub top_k: usize,
    pub space: SearchSpace,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            n_trials: 32,
            n_splits: 5,
            seed: 0,
            max_epochs: 256,
            patience: 16,
            top_k: 8,
            space: SearchSpace::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Study {
    pub dataset: String,
    pub mode: CorruptionMode,
    pub model: ModelKind,
    pub trials: Vec<TrialResult>,
}

impl Study {
    /// Successful trial with the highest mean validation metric (earliest on ties).
    pub fn best(&self) -> Option<&TrialResult> {
        self.trials.iter().filter(|t| t.succeeded()).fold(None, |best: Option<&TrialResult>, t| match best {
            Some(b) if b.val_mean >= t.val_mean => Some(b),
            _ => Some(t),
        })
    }

    pub fn n_failed(&self) -> usize {
        self.trials.iter().filter(|t| !t.succeeded()).count()
    }
}

/// Everything a study needs besides the sink.
pub struct StudySpec<'a> {
    pub table: &'a Table,
    pub dataset: &'a str,
    pub mode: CorruptionMode,
    pub model: ModelKind,
    pub options: &'a StudyOptions,
    /// Baseline configurations for QuAIL studies.
    pub pool: Option<&'a [RankedArchitecture]>,
    pub inspector: Option<&'a SplitInspector<'a>>,
}

/// Seeded configuration of trial `index`.
pub fn trial_config(spec: &StudySpec<'_>, index: usize) -> Result<TrialConfig> {
    let o = spec.options;
    let seed = rng::derive_seed(o.seed, tag::TRIAL, index as u64);
    match (spec.model, spec.pool) {
        (ModelKind::Quail, Some(pool)) => sample_quail_config(&o.space, pool, seed),
        (model, _) => Ok(sample_config(&o.space, model, seed, o.max_epochs, o.patience)),
    }
}

/// Split seed of trial `index`; shared across model kinds so that trial i of
/// every study sees the same splits and corruption.
pub fn trial_split_seed(options: &StudyOptions, index: usize) -> u64 {
    rng::derive_seed(options.seed, tag::SPLIT, index as u64)
}

pub fn run_trial(spec: &StudySpec<'_>, index: usize) -> TrialResult {
    let split_seed = trial_split_seed(spec.options, index);
    let config = match trial_config(spec, index) {
        Ok(c) => c,
        Err(e) => {
            return TrialResult {
                index,
                split_seed,
                config: sample_config(&spec.options.space, spec.model, 0, spec.options.max_epochs, spec.options.patience),
                val: vec![],
                test: vec![],
                val_mean: None,
                test_mean: None,
                best_epochs: vec![],
                error: Some(e.to_string()),
            }
        }
    };
    let inspect = spec.inspector.map(|f| (f, index));
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        evaluate_trial(spec.table, spec.mode, &config, split_seed, spec.options.n_splits, inspect)
    }));
    let (eval, error) = match outcome {
        Ok(Ok(e)) => (Some(e), None),
        Ok(Err(e)) => (None, Some(e.to_string())),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".to_owned());
            (None, Some(format!("panic: {msg}")))
        }
    };
    match eval {
        Some(e) => TrialResult {
            index,
            split_seed,
            config,
            val_mean: Some(crate::eval::mean(&e.val)),
            test_mean: Some(crate::eval::mean(&e.test)),
            val: e.val,
            test: e.test,
            best_epochs: e.best_epochs,
            error: None,
        },
        None => TrialResult {
            index,
            split_seed,
            config,
            val: vec![],
            test: vec![],
            val_mean: None,
            test_mean: None,
            best_epochs: vec![],
            error,
        },
    }
}

/// Runs the remaining trials of a study in parallel batches, handing each
/// finished trial to `sink` in index order. `completed` holds trials
/// restored from a previous run (indices 0..completed.len()).
pub fn run_study(
    spec: &StudySpec<'_>,
    completed: Vec<TrialResult>,
    mut sink: impl FnMut(&TrialResult) -> Result<()>,
) -> Result<Study> {
    if completed.iter().enumerate().any(|(i, t)| t.index != i) {
        return Err(QuailError::invalid("restored trials must form a prefix in index order"));
    }
    let n = spec.options.n_trials;
    let mut trials = completed;
    trials.truncate(n);
    let chunk = rayon::current_num_threads().max(1);
    let mut next = trials.len();
    while next < n {
        let end = (next + chunk).min(n);
        let batch: Vec<TrialResult> = (next..end).into_par_iter().map(|i| run_trial(spec, i)).collect();
        for t in batch {
            if let Some(err) = &t.error {
                log::warn!("{} {} {} trial {} failed: {err}", spec.dataset, spec.mode, spec.model, t.index);
            }
            sink(&t)?;
            trials.push(t);
        }
        next = end;
    }
    Ok(Study {
        dataset: spec.dataset.to_owned(),
        mode: spec.mode,
        model: spec.model,
        trials,
    })
}

pub const LEDGER_FORMAT: &str = "quail-ledger";
pub const LEDGER_VERSION: u32 = 1;

/// First line of a ledger file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerHeader {
    pub format: String,
    pub version: u32,
    pub dataset: String,
    pub task: Task,
    pub n_rows: usize,
    pub mode: CorruptionMode,
    pub model: ModelKind,
    pub options: StudyOptions,
}

impl LedgerHeader {
    pub fn new(dataset: &str, table: &Table, mode: CorruptionMode, model: ModelKind, options: &StudyOptions) -> Self {
        LedgerHeader {
            format: LEDGER_FORMAT.to_owned(),
            version: LEDGER_VERSION,
            dataset: dataset.to_owned(),
            task: table.schema().target.task,
            n_rows: table.n_rows(),
            mode,
            model,
            options: options.clone(),
        }
    }
}

/// Append-only JSON-lines file: a header line, then one trial per line.
pub struct Ledger {
    path: PathBuf,
    file: std::fs::File,
}

impl Ledger {
    /// Opens `path` for appending, restoring previously recorded trials when
    /// the header matches. A mismatched header is an error.
    pub fn open(path: &Path, header: &LedgerHeader) -> Result<(Self, Vec<TrialResult>)> {
        let restored = if path.exists() {
            let (existing, trials) = read_ledger(path)?;
            if &existing != header {
                return Err(QuailError::invalid(format!(
                    "ledger {} was written with a different configuration",
                    path.display()
                )));
            }
            Some(trials)
        } else {
            None
        };
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| QuailError::io(path, e))?;
        let trials = match restored {
            Some(t) => t,
            None => {
                let line = serde_json::to_string(header)?;
                writeln!(file, "{line}").map_err(|e| QuailError::io(path, e))?;
                Vec::new()
            }
        };
        Ok((
            Ledger {
                path: path.to_owned(),
                file,
            },
            trials,
        ))
    }

    pub fn append(&mut self, trial: &TrialResult) -> Result<()> {
        let line = serde_json::to_string(trial)?;
        writeln!(self.file, "{line}").map_err(|e| QuailError::io(&self.path, e))?;
        self.file.flush().map_err(|e| QuailError::io(&self.path, e))
    }
}

pub fn read_ledger(path: &Path) -> Result<(LedgerHeader, Vec<TrialResult>)> {
    let file = std::fs::File::open(path).map_err(|e| QuailError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| QuailError::invalid(format!("{} is empty", path.display())))?
        .map_err(|e| QuailError::io(path, e))?;
    let header: LedgerHeader = serde_json::from_str(&first)?;
    if header.format != LEDGER_FORMAT || header.version != LEDGER_VERSION {
        return Err(QuailError::invalid(format!(
            "unsupported ledger {} v{}",
            header.format, header.version
        )));
    }
    let mut trials = Vec::new();
    for line in lines {
        let line = line.map_err(|e| QuailError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        trials.push(serde_json::from_str(&line)?);
    }
    Ok((header, trials))
}
