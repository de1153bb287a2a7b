//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when any fails.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::Rng as _;
use rand_distr::StandardNormal;

use quail_cli::config::{DatasetConfig, StudyConfig};
use quail_cli::{cmd_study, improvements, ExperimentConfig};
use quail_core::corrupt::{self, CnarConfig, CorruptionMode, SeverityPlan, Tier};
use quail_core::data::{self, Cell, Column, EncodedMatrix, FeatureSchema, TargetSpec, Table, Task};
use quail_core::eval;
use quail_core::gradcheck;
use quail_core::nn::{Activation, MlpModel};
use quail_core::quail::{Anneal, GateConfig, GateInit, GateState, Phi};
use quail_core::rng;
use quail_core::search::{self, ModelKind, PreparedSplit, SearchSpace, StudyOptions, StudySpec};
use quail_core::train::{self, LrSchedule, OptimizerKind, TrainConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn schema(columns: Vec<Column>, task: Task, classes: &[&str]) -> FeatureSchema {
    FeatureSchema::new(
        columns,
        TargetSpec {
            name: "y".into(),
            task,
            classes: classes.iter().map(|s| s.to_string()).collect(),
        },
    )
    .unwrap()
}

fn normal_column(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

fn column_major_table(schema: FeatureSchema, columns: &[Vec<Cell>], targets: Vec<f64>) -> Table {
    let n = targets.len();
    let mut cells = Vec::with_capacity(n * columns.len());
    for r in 0..n {
        for c in columns {
            cells.push(c[r]);
        }
    }
    Table::new(schema, cells, targets).unwrap()
}

fn sample_std(v: &[f64]) -> f64 {
    data::sample_std(v)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let reports = gradcheck::run(20, 2024).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = reports.iter().map(|r| r.max_scaled_error).fold(0.0, f64::max);
    let failed = reports.iter().filter(|r| !r.passed()).count();
    let coords: usize = reports.iter().map(|r| r.coordinates).sum();
    check(
        failed == 0 && reports.len() == 20 && elapsed < Duration::from_secs(60),
        format!(
            "{} configs, {coords} coordinates, {failed} failing, max rel err {worst:.2e}, {:.2}s",
            reports.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let n = 100_000;
    let d_num = 14;
    let mut r = rng::stream(2, rng::tag::SAMPLE, 0);
    let mut columns: Vec<Vec<Cell>> = (0..d_num)
        .map(|_| normal_column(&mut r, n).into_iter().map(Cell::Num).collect())
        .collect();
    for _ in 0..2 {
        columns.push((0..n).map(|_| Cell::Cat(r.random_range(0..4))).collect());
    }
    let mut cols: Vec<Column> = (0..d_num).map(|j| Column::numeric(format!("x{j}"))).collect();
    cols.push(Column::categorical("c0", ["a", "b", "c", "d"]));
    cols.push(Column::categorical("c1", ["a", "b", "c", "d"]));
    let table = column_major_table(schema(cols, Task::Regression, &[]), &columns, vec![0.0; n]);
    let plan = corrupt::plan_severity(table.schema(), 17);
    let (out, mask) = corrupt::corrupt_ccar(&table, &plan, 17).map_err(|e| e.to_string())?;

    let mut worst_rate = 0.0f64;
    let mut snr_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut missing_exact = true;
    let mut tiers_seen = Vec::new();
    for (j, &tier) in plan.tiers.iter().enumerate() {
        let m = mask.corrupted_in_column(j);
        worst_rate = worst_rate.max((m as f64 / n as f64 - tier.rate()).abs());
        missing_exact &= mask.missing_in_column(j) == (0.3 * m as f64).floor() as usize;
        if !tiers_seen.contains(&tier) {
            tiers_seen.push(tier);
        }
        if j < d_num {
            let clean = table.numeric_values(j);
            let noise: Vec<f64> = (0..n)
                .filter(|&i| mask.is_corrupted(i, j) && !mask.is_made_missing(i, j))
                .map(|i| out.cell(i, j).as_num().unwrap() - table.cell(i, j).as_num().unwrap())
                .collect();
            let snr = 20.0 * (sample_std(&clean) / sample_std(&noise)).log10();
            snr_range = (snr_range.0.min(snr), snr_range.1.max(snr));
        }
    }
    check(
        worst_rate <= 0.01
            && missing_exact
            && tiers_seen.len() == 4
            && (snr_range.0 - 20.0).abs() <= 0.5
            && (snr_range.1 - 20.0).abs() <= 0.5,
        format!(
            "max |rate - tier| {worst_rate:.4}, SNR {:.3}..{:.3} dB, missing = floor(0.3 m) in every column: {missing_exact}",
            snr_range.0, snr_range.1
        ),
    )
}

fn severe_plan(d: usize) -> SeverityPlan {
    SeverityPlan {
        tiers: vec![Tier::Severe; d],
        seed: 0,
    }
}

fn single_column_table(values: Vec<Cell>, column: Column) -> Table {
    let n = values.len();
    column_major_table(schema(vec![column], Task::Regression, &[]), &[values], vec![0.0; n])
}

fn criterion_3() -> Outcome {
    let n = 100_000;
    let cfg = CnarConfig::default();
    let mut r = rng::stream(3, rng::tag::SAMPLE, 0);

    // Heteroscedastic noise SNR in normalized space.
    let x = normal_column(&mut r, n);
    let table = single_column_table(x.iter().map(|&v| Cell::Num(v)).collect(), Column::numeric("x"));
    let (out, mask) = corrupt::corrupt_cnar(&table, &severe_plan(1), &cfg, 31).map_err(|e| e.to_string())?;
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let norm = |v: f64| (v - lo) / (hi - lo);
    let u: Vec<f64> = x.iter().map(|&v| norm(v)).collect();
    let eps: Vec<f64> = (0..n)
        .filter(|&i| mask.is_corrupted(i, 0) && !mask.is_made_missing(i, 0))
        .map(|i| (norm(out.cell(i, 0).as_num().unwrap()) - u[i]) / (1.0 + 3.0 * u[i]))
        .collect();
    let snr = 20.0 * (sample_std(&u) / sample_std(&eps)).log10();

    // MNAR rate at |x - median| = IQR: half the rows at ±IQR around a
    // symmetric core whose quartiles are ∓0.25.
    let core = 100_001usize;
    let mut vals: Vec<f64> = (0..core).map(|k| (k as f64 - 50_000.0) / 200_000.0).collect();
    vals.extend(std::iter::repeat_n(-0.5, 50_000));
    vals.extend(std::iter::repeat_n(0.5, 50_000));
    let mut sorted = vals.clone();
    sorted.sort_by(f64::total_cmp);
    let med = data::quantile_sorted(&sorted, 0.5);
    let iqr = data::quantile_sorted(&sorted, 0.75) - data::quantile_sorted(&sorted, 0.25);
    let t = single_column_table(vals.iter().map(|&v| Cell::Num(v)).collect(), Column::numeric("x"));
    let (_, m2) = corrupt::corrupt_cnar(&t, &severe_plan(1), &cfg, 32).map_err(|e| e.to_string())?;
    let at_iqr: Vec<usize> = (0..vals.len()).filter(|&i| ((vals[i] - med).abs() - iqr).abs() < 1e-12).collect();
    let mnar_rate = at_iqr.iter().filter(|&&i| m2.is_made_missing(i, 0)).count() as f64 / at_iqr.len() as f64;

    // Cyclic confusion among swapped categorical cells, k = 5.
    let k = 5u32;
    let cats: Vec<Cell> = (0..n).map(|_| Cell::Cat(r.random_range(0..k))).collect();
    let ct = single_column_table(cats, Column::categorical("c", ["a", "b", "c", "d", "e"]));
    let (cout, cm) = corrupt::corrupt_cnar(&ct, &severe_plan(1), &cfg, 33).map_err(|e| e.to_string())?;
    let swapped: Vec<usize> = (0..n).filter(|&i| cm.is_corrupted(i, 0) && !cm.is_made_missing(i, 0)).collect();
    let cyclic = swapped
        .iter()
        .filter(|&&i| cout.cell(i, 0).as_cat() == Some((ct.cell(i, 0).as_cat().unwrap() + 1) % k))
        .count() as f64
        / swapped.len() as f64;

    // Missing rate by decile of |x - median|.
    let mut sorted_x = x.clone();
    sorted_x.sort_by(f64::total_cmp);
    let mx = data::quantile_sorted(&sorted_x, 0.5);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| (x[a] - mx).abs().total_cmp(&(x[b] - mx).abs()));
    let deciles: Vec<f64> = order
        .chunks(n / 10)
        .map(|c| c.iter().filter(|&&i| mask.is_made_missing(i, 0)).count() as f64 / c.len() as f64)
        .collect();
    let monotone = deciles.windows(2).all(|w| w[0] <= w[1]);

    check(
        (snr - 15.0).abs() <= 0.5
            && (mnar_rate - 0.20).abs() <= 0.01
            && (cyclic - 0.70).abs() <= 0.01
            && swapped.len() >= 10_000
            && monotone,
        format!(
            "SNR {snr:.3} dB, MNAR rate at IQR {mnar_rate:.4} (n={}), cyclic {cyclic:.4} (m={}), deciles {:?}",
            at_iqr.len(),
            swapped.len(),
            deciles.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn matrix(x: Array2<f64>, y: Vec<f64>, task: Task, n_classes: Option<usize>) -> EncodedMatrix {
    let d = x.ncols();
    EncodedMatrix {
        x,
        y,
        task,
        n_classes,
        column_map: (0..d).map(|j| j..j + 1).collect(),
        feature_of_encoded: (0..d).collect(),
    }
}

fn classification_data(n: usize, d: usize, seed: u64) -> EncodedMatrix {
    let mut r = rng::stream(seed, rng::tag::SAMPLE, 1);
    let x = Array2::from_shape_simple_fn((n, d), || r.sample::<f64, _>(StandardNormal));
    let y = x
        .rows()
        .into_iter()
        .map(|row| {
            let s = row[0] + 0.5 * row[1] - row[2];
            if s < -0.5 {
                0.0
            } else if s < 0.5 {
                1.0
            } else {
                2.0
            }
        })
        .collect();
    matrix(x, y, Task::Classification, Some(3))
}

fn train_config(seed: u64, epochs: usize, gates: GateConfig) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        batch_size: 32,
        optimizer: OptimizerKind::Adam,
        weight_decay: 1e-4,
        lr_schedule: LrSchedule::Plateau,
        max_epochs: epochs,
        patience: epochs + 1,
        quail: Some(gates),
        curriculum: None,
        seed,
    }
}

fn criterion_4() -> Outcome {
    let train_m = classification_data(500, 10, 40);
    let val_m = classification_data(100, 10, 41);
    let ones = vec![1.0; 10];
    let mut details = Vec::new();
    let mut all_equal = true;
    for (i, phi) in Phi::ALL.into_iter().enumerate() {
        let seed = 400 + i as u64;
        let model = MlpModel::new(10, &[16, 8], 3, Activation::Gelu, 0.2, &mut rng::stream(seed, rng::tag::MODEL_INIT, 0))
            .map_err(|e| e.to_string())?;
        let quail_cfg = GateConfig {
            init: GateInit::Quality,
            phi,
            lambda0: 0.5,
            anneal: Anneal::Cosine,
            t_anchor: 5,
        };
        let plain_cfg = GateConfig {
            init: GateInit::Ones,
            phi: Phi::Linear,
            lambda0: 0.0,
            anneal: Anneal::Constant,
            t_anchor: 5,
        };
        let run = |gc: GateConfig| {
            let gates = GateState::new(gc, &ones, seed).unwrap();
            train::train_model(model.clone(), Some(gates), &train_m, &val_m, None, &train_config(seed, 50, gc)).unwrap()
        };
        let a = run(quail_cfg);
        let b = run(plain_cfg);
        let bits = |v: f64| v.to_bits();
        let same_history = a.history.len() == 50
            && a.history.len() == b.history.len()
            && a.history.iter().zip(&b.history).all(|(p, q)| {
                bits(p.train_loss) == bits(q.train_loss)
                    && bits(p.task_loss) == bits(q.task_loss)
                    && bits(p.val_metric) == bits(q.val_metric)
                    && bits(p.lr) == bits(q.lr)
                    && p.gate_loss == 0.0
                    && q.gate_loss == 0.0
            });
        let ga = a.gates.as_ref().unwrap();
        let gb = b.gates.as_ref().unwrap();
        let same_gates = ga.g.iter().zip(gb.g.iter()).all(|(p, q)| bits(*p) == bits(*q));
        let same_weights = a.model.layers.iter().zip(&b.model.layers).all(|(p, q)| {
            p.weight.iter().zip(q.weight.iter()).all(|(u, v)| bits(*u) == bits(*v))
                && p.bias.iter().zip(q.bias.iter()).all(|(u, v)| bits(*u) == bits(*v))
        });
        let gates_moved = ga.g.iter().any(|&g| g != 1.0);
        let ok = same_history && same_gates && same_weights && gates_moved && a.best_epoch == b.best_epoch;
        all_equal &= ok;
        details.push(format!("{phi:?}:{}", if ok { "identical" } else { "differs" }));
    }
    check(all_equal, format!("50 epochs, 500x10, {}", details.join(" ")))
}

fn criterion_5() -> Outcome {
    let n = 1000;
    let mut wins = 0;
    let mut gaps = Vec::new();
    let q: Vec<f64> = (0..10).map(|j| if j < 5 { 1.0 } else { 0.2 }).collect();
    for seed in 0..10u64 {
        let mut r = rng::stream(500 + seed, rng::tag::SAMPLE, 0);
        let beta: Vec<f64> = (0..5).map(|_| r.random_range(0.5..1.5) * if r.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let mut make = |rows: usize| {
            let x = Array2::from_shape_simple_fn((rows, 10), || r.sample::<f64, _>(StandardNormal));
            let y = x
                .rows()
                .into_iter()
                .map(|row| (0..5).map(|j| beta[j] * row[j]).sum::<f64>() + 0.1 * r.sample::<f64, _>(StandardNormal))
                .collect();
            matrix(x, y, Task::Regression, None)
        };
        let train_m = make(n);
        let val_m = make(200);
        let gc = GateConfig {
            init: GateInit::Ones,
            phi: Phi::Linear,
            lambda0: 0.05,
            anneal: Anneal::Constant,
            t_anchor: 20,
        };
        let model = MlpModel::new(10, &[16], 1, Activation::Relu, 0.0, &mut rng::stream(seed, rng::tag::MODEL_INIT, 0))
            .map_err(|e| e.to_string())?;
        let gates = GateState::new(gc, &q, seed).map_err(|e| e.to_string())?;
        let g_init = gates.g.clone();
        let mut cfg = train_config(seed, 100, gc);
        cfg.batch_size = 64;
        let out = train::train_model(model, Some(gates), &train_m, &val_m, None, &cfg).map_err(|e| e.to_string())?;
        let g = &out.gates.as_ref().unwrap().g;
        let drift = |range: std::ops::Range<usize>| range.clone().map(|j| (g[j] - g_init[j]).abs()).sum::<f64>() / range.len() as f64;
        let (high, low) = (drift(0..5), drift(5..10));
        if low < high {
            wins += 1;
        }
        gaps.push(format!("{low:.3}<{high:.3}"));
    }
    check(wins >= 9, format!("{wins}/10 seeds with low-q drift below high-q drift [{}]", gaps.join(" ")))
}

fn dataset(id: &str, file: &str, target: &str, task: Task) -> DatasetConfig {
    DatasetConfig {
        id: id.into(),
        path: data_dir().join(file),
        target: target.into(),
        task,
    }
}

fn desk_datasets() -> Vec<DatasetConfig> {
    vec![
        dataset("iris", "iris.csv", "species", Task::Classification),
        dataset("wine", "wine.csv", "cultivar", Task::Classification),
        dataset("auto_mpg", "auto_mpg.csv", "mpg", Task::Regression),
    ]
}

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig {
        seed: 0,
        output_dir: dir.path().to_path_buf(),
        workers: None,
        modes: vec![CorruptionMode::Cnar],
        models: vec![ModelKind::Mlp, ModelKind::Quail],
        datasets: desk_datasets(),
        study: StudyConfig {
            trials: 32,
            splits: 5,
            ..StudyConfig::default()
        },
        search: SearchSpace::default(),
    };
    let start = Instant::now();
    let report = cmd_study(&cfg).map_err(|e| format!("{e:#}"))?;
    let elapsed = start.elapsed();
    let imp = improvements(&report.cells).map_err(|e| e.to_string())?;
    let cnar = imp.iter().find(|i| i.mode == CorruptionMode::Cnar).ok_or("no CNAR comparison")?;
    let wins = cnar.per_dataset.iter().filter(|(_, v)| *v >= 0.0).count();
    let per: Vec<String> = cnar.per_dataset.iter().map(|(d, v)| format!("{d} {v:+.2}")).collect();
    check(
        cnar.per_dataset.len() == 3 && wins >= 2 && cnar.trimmed_mean >= 0.0 && elapsed < Duration::from_secs(1800),
        format!(
            "QuAIL >= MLP on {wins}/3 [{}], trimmed mean {:+.2} points, {:.0}s",
            per.join(", "),
            cnar.trimmed_mean,
            elapsed.as_secs_f64()
        ),
    )
}

fn brute_f1(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..k {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for i in 0..pred.len() {
            match (pred[i] == c, truth[i] == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        total += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    total / k as f64
}

fn brute_r2(pred: &[f64], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mut mean = 0.0;
    for v in y {
        mean += v / n;
    }
    let mut res = 0.0;
    let mut tot = 0.0;
    for i in 0..y.len() {
        res += (y[i] - pred[i]) * (y[i] - pred[i]);
        tot += (y[i] - mean) * (y[i] - mean);
    }
    1.0 - res / tot
}

fn brute_trimmed(values: &[f64], trim: f64) -> f64 {
    let mut v = values.to_vec();
    let cut = (trim * v.len() as f64).floor() as usize;
    for _ in 0..cut {
        let (imin, _) = v.iter().enumerate().fold((0, f64::INFINITY), |b, (i, &x)| if x < b.1 { (i, x) } else { b });
        v.remove(imin);
        let (imax, _) = v.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b });
        v.remove(imax);
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_7() -> Outcome {
    let mut r = rng::stream(7, rng::tag::SAMPLE, 0);
    let (mut f1_err, mut r2_err, mut tm_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = r.random_range(1..30);
        let k = r.random_range(2..6);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let f = eval::f1_macro(&pred, &truth, k).map_err(|e| e.to_string())?;
        f1_err = f1_err.max((f - brute_f1(&pred, &truth, k)).abs());

        let m = r.random_range(2..30);
        let y: Vec<f64> = (0..m).map(|_| r.random_range(-10.0..10.0)).collect();
        let p: Vec<f64> = (0..m).map(|_| r.random_range(-10.0..10.0)).collect();
        r2_err = r2_err.max((eval::r2(&p, &y).map_err(|e| e.to_string())? - brute_r2(&p, &y)).abs());

        let len = r.random_range(1..40);
        let v: Vec<f64> = (0..len).map(|_| r.random_range(-100.0..100.0)).collect();
        let trim = r.random_range(0.0..0.45);
        let t = eval::trimmed_mean(&v, trim).map_err(|e| e.to_string())?;
        tm_err = tm_err.max((t - brute_trimmed(&v, trim)).abs());
    }
    check(
        f1_err <= 1e-12 && r2_err <= 1e-12 && tm_err <= 1e-12,
        format!("1000 instances, max abs diff f1 {f1_err:.1e}, r2 {r2_err:.1e}, trimmed mean {tm_err:.1e}"),
    )
}

fn table_bytes(t: &Table) -> Vec<u8> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    buf
}

fn cells_bitwise_equal(a: &Table, b: &Table) -> bool {
    a.schema() == b.schema()
        && a.targets().iter().map(|v| v.to_bits()).eq(b.targets().iter().map(|v| v.to_bits()))
        && a.cells().iter().zip(b.cells()).all(|(x, y)| match (x, y) {
            (Cell::Num(p), Cell::Num(q)) => p.to_bits() == q.to_bits(),
            _ => x == y,
        })
        && a.cells().len() == b.cells().len()
}

/// Runs small studies over `table` and checks every split seen by the trials.
fn hygiene_study(table: &Table, seed: u64, trials: usize, splits: usize, epochs: usize) -> Result<usize, String> {
    let before = table_bytes(table);
    let inspected = AtomicUsize::new(0);
    let violations = Mutex::new(Vec::new());
    let corrupted_any = AtomicUsize::new(0);
    let inspector = |trial: usize, s: usize, split: &data::Split, prep: &PreparedSplit| {
        inspected.fetch_add(1, Ordering::Relaxed);
        for (name, idx, got) in [("val", &split.val_idx, &prep.val), ("test", &split.test_idx, &prep.test)] {
            let original = table.select_rows(idx);
            if table_bytes(&original) != table_bytes(got) || !cells_bitwise_equal(&original, got) {
                violations.lock().unwrap().push(format!("trial {trial} split {s} {name}"));
            }
        }
        corrupted_any.fetch_add(prep.corruption.mask.total_corrupted(), Ordering::Relaxed);
    };
    for mode in [CorruptionMode::Ccar, CorruptionMode::Cnar] {
        let mut pool = None;
        for model in [ModelKind::Mlp, ModelKind::Curriculum, ModelKind::Quail] {
            let options = StudyOptions {
                n_trials: trials,
                n_splits: splits,
                seed,
                max_epochs: epochs,
                patience: 4,
                top_k: 2,
                space: SearchSpace::default(),
            };
            let spec = StudySpec {
                table,
                dataset: "prop",
                mode,
                model,
                options: &options,
                pool: pool.as_deref(),
                inspector: Some(&inspector),
            };
            let study = search::run_study(&spec, Vec::new(), |_| Ok(())).map_err(|e| e.to_string())?;
            if model == ModelKind::Mlp {
                pool = Some(search::top_k_architectures(&study.trials, 2));
            }
        }
    }
    let v = violations.into_inner().unwrap();
    if !v.is_empty() {
        return Err(format!("modified rows: {v:?}"));
    }
    if table_bytes(table) != before {
        return Err("source table changed".into());
    }
    let seen = inspected.load(Ordering::Relaxed);
    if seen != 2 * 3 * trials * splits {
        return Err(format!("inspected {seen} splits, expected {}", 2 * 3 * trials * splits));
    }
    if corrupted_any.load(Ordering::Relaxed) == 0 {
        return Err("no corruption was injected".into());
    }
    Ok(seen)
}

fn random_table() -> impl Strategy<Value = Table> {
    (20usize..60, 1usize..4, 0usize..3, any::<u64>()).prop_map(|(n, d_num, d_cat, seed)| {
        let mut r = rng::stream(seed, rng::tag::SAMPLE, 0);
        let mut columns: Vec<Vec<Cell>> = Vec::new();
        let mut cols = Vec::new();
        for j in 0..d_num {
            cols.push(Column::numeric(format!("x{j}")));
            columns.push(
                (0..n)
                    .map(|_| if r.random_bool(0.05) { Cell::Missing } else { Cell::Num(r.random_range(-50.0..50.0)) })
                    .collect(),
            );
        }
        for j in 0..d_cat {
            cols.push(Column::categorical(format!("c{j}"), ["p", "q", "r"]));
            columns.push((0..n).map(|_| Cell::Cat(r.random_range(0..3))).collect());
        }
        for c in &mut columns {
            // at least one observed value per column
            if c.iter().all(Cell::is_missing) {
                c[0] = Cell::Num(1.0);
            }
        }
        let targets = (0..n).map(|i| (i % 2) as f64).collect();
        column_major_table(schema(cols, Task::Classification, &["no", "yes"]), &columns, targets)
    })
}

fn criterion_8() -> Outcome {
    let iris = data::load_csv(&data_dir().join("iris.csv"), "species", Task::Classification, None).map_err(|e| e.to_string())?;
    let total = AtomicUsize::new(hygiene_study(&iris, 8, 4, 5, 5)?);
    let mut runner = TestRunner::new(PtConfig {
        cases: 24,
        ..PtConfig::default()
    });
    let cases = AtomicUsize::new(0);
    runner
        .run(&random_table(), |t| {
            let seen = hygiene_study(&t, 9, 2, 2, 2).map_err(TestCaseError::fail)?;
            cases.fetch_add(1, Ordering::Relaxed);
            total.fetch_add(seen, Ordering::Relaxed);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    check(
        true,
        format!(
            "{} split evaluations (iris + {} random tables, CCAR and CNAR) with byte-identical val/test rows",
            total.load(Ordering::Relaxed),
            cases.load(Ordering::Relaxed)
        ),
    )
}

fn small_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        seed: 99,
        output_dir: out.to_path_buf(),
        workers: None,
        modes: vec![CorruptionMode::Ccar, CorruptionMode::Cnar],
        models: ModelKind::ALL.to_vec(),
        datasets: vec![
            dataset("iris", "iris.csv", "species", Task::Classification),
            dataset("auto_mpg", "auto_mpg.csv", "mpg", Task::Regression),
        ],
        study: StudyConfig {
            trials: 4,
            splits: 2,
            top_k: 2,
            max_epochs: 15,
            patience: 5,
        },
        search: SearchSpace::default(),
    }
}

fn criterion_9() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |dir: &Path, threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| cmd_study(&small_config(dir)))
            .map_err(|e| format!("{e:#}"))
    };
    let ra = run(a.path(), 1)?;
    run(b.path(), 3)?;
    let mut compared = 0;
    for st in &ra.studies {
        let name = st.ledger.file_name().unwrap();
        let x = std::fs::read(a.path().join("ledgers").join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join("ledgers").join(name)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
        compared += 1;
    }
    for table in ["results.csv", "summary.csv"] {
        let x = std::fs::read(a.path().join(table)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(table)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{table} differs"));
        }
    }
    check(compared == 16, format!("{compared} ledgers byte-identical across two runs (1 and 3 workers)"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("gradient check of the composite loss", criterion_1),
        ("CCAR realization", criterion_2),
        ("CNAR properties", criterion_3),
        ("degeneracy at q = 1", criterion_4),
        ("inertia ordering", criterion_5),
        ("desk-scale direction on iris/wine/auto_mpg", criterion_6),
        ("metric oracles", criterion_7),
        ("validation/test hygiene", criterion_8),
        ("ledger determinism", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|s| id.ends_with(s.as_str()) || name.contains(s.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {id} ({name}): {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {id} ({name}): {d} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
