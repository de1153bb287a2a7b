//! Command implementations behind the `quail` binary.

pub mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use quail_core::corrupt::{self, CorruptionMode, Tier};
use quail_core::data::{self, Task};
use quail_core::eval::{self, CellResult};
use quail_core::search::{self, Ledger, LedgerHeader, ModelKind, StudySpec, TrialResult};
use quail_core::{gradcheck, QuailError};

pub use config::ExperimentConfig;

/// Invalid invocation or configuration (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// 0 success, 1 I/O or runtime failure, 2 usage or validation error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(q) = cause.downcast_ref::<QuailError>() {
            return match q {
                QuailError::Io { .. } | QuailError::Csv(_) | QuailError::Json(_) => 1,
                QuailError::Parse { .. }
                | QuailError::UnknownCategory { .. }
                | QuailError::SchemaMismatch(_)
                | QuailError::InvalidArgument(_) => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    1
}

pub fn ledger_dir(output_dir: &Path) -> PathBuf {
    output_dir.join("ledgers")
}

pub fn ledger_path(output_dir: &Path, dataset: &str, mode: CorruptionMode, model: ModelKind) -> PathBuf {
    ledger_dir(output_dir).join(format!("{dataset}_{mode}_{model}.jsonl"))
}

#[derive(Debug, Clone)]
pub struct CorruptArgs {
    pub data: PathBuf,
    pub target: String,
    pub task: Task,
    pub mode: CorruptionMode,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct CorruptionSidecar<'a> {
    mode: CorruptionMode,
    seed: u64,
    n_rows: usize,
    columns: Vec<&'a str>,
    tiers: Option<&'a [Tier]>,
    anchors: &'a [usize],
    quality: &'a [f64],
    corrupted_cells: usize,
}

/// Corrupts a whole CSV file as if it were a training partition and writes
/// `corrupted.csv`, `mask.csv` and `quality.json` into `out_dir`.
pub fn cmd_corrupt(args: &CorruptArgs) -> anyhow::Result<corrupt::Corrupted> {
    let table = data::load_csv(&args.data, &args.target, args.task, None)?;
    let result = corrupt::corrupt_table(&table, args.mode, args.seed)?;
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    result.table.save_csv(&args.out_dir.join("corrupted.csv"))?;
    let mask_path = args.out_dir.join("mask.csv");
    let file = fs::File::create(&mask_path).with_context(|| format!("creating {}", mask_path.display()))?;
    result.mask.write_csv(std::io::BufWriter::new(file))?;
    let sidecar = CorruptionSidecar {
        mode: args.mode,
        seed: args.seed,
        n_rows: table.n_rows(),
        columns: table.schema().columns.iter().map(|c| c.name.as_str()).collect(),
        tiers: result.plan.as_ref().map(|p| p.tiers.as_slice()),
        anchors: &result.mask.anchors,
        quality: &result.quality.q,
        corrupted_cells: result.mask.total_corrupted(),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    let path = args.out_dir.join("quality.json");
    fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(result)
}

/// Outcome of one (dataset, mode, model) study.
#[derive(Debug, Clone)]
pub struct StudyRecord {
    pub dataset: String,
    pub mode: CorruptionMode,
    pub model: ModelKind,
    pub ledger: PathBuf,
    pub best: Option<TrialResult>,
    pub failed: usize,
}

impl StudyRecord {
    fn cell(&self) -> Option<CellResult> {
        self.best
            .as_ref()
            .map(|b| CellResult::new(self.dataset.clone(), self.mode, self.model, b.test.clone()))
    }
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub studies: Vec<StudyRecord>,
    pub cells: Vec<CellResult>,
}

/// Runs every configured (dataset, mode, model) study, resuming from
/// existing ledgers, then writes `results.csv` and `summary.csv`.
pub fn cmd_study(cfg: &ExperimentConfig) -> anyhow::Result<StudyReport> {
    cfg.validate()?;
    let options = cfg.study_options();
    fs::create_dir_all(ledger_dir(&cfg.output_dir))
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let mut studies = Vec::new();
    for ds in &cfg.datasets {
        let table = data::load_csv(&ds.path, &ds.target, ds.task, None)
            .with_context(|| format!("loading dataset {}", ds.id))?;
        for mode in cfg.mode_plan() {
            let mut pool = None;
            for model in cfg.model_plan() {
                let path = ledger_path(&cfg.output_dir, &ds.id, mode, model);
                let header = LedgerHeader::new(&ds.id, &table, mode, model, &options);
                let (mut ledger, restored) = Ledger::open(&path, &header)?;
                if !restored.is_empty() {
                    log::info!("{}: resuming after {} trials", path.display(), restored.len());
                }
                let spec = StudySpec {
                    table: &table,
                    dataset: &ds.id,
                    mode,
                    model,
                    options: &options,
                    pool: pool.as_deref(),
                    inspector: None,
                };
                let study = search::run_study(&spec, restored, |t| ledger.append(t))?;
                if model == ModelKind::Mlp {
                    pool = Some(search::top_k_architectures(&study.trials, options.top_k));
                }
                log::info!(
                    "{} {} {}: {} trials, {} failed",
                    ds.id,
                    mode,
                    model,
                    study.trials.len(),
                    study.n_failed()
                );
                studies.push(StudyRecord {
                    dataset: ds.id.clone(),
                    mode,
                    model,
                    ledger: path,
                    best: study.best().cloned(),
                    failed: study.n_failed(),
                });
            }
        }
    }
    let cells = collect_cells(&studies);
    write_tables(&cfg.output_dir, &cells)?;
    Ok(StudyReport { studies, cells })
}

fn collect_cells(studies: &[StudyRecord]) -> Vec<CellResult> {
    studies
        .iter()
        .filter_map(|s| {
            let cell = s.cell();
            if cell.is_none() {
                log::warn!("{} {} {}: no successful trial", s.dataset, s.mode, s.model);
            }
            cell
        })
        .collect()
}

fn write_tables(dir: &Path, cells: &[CellResult]) -> anyhow::Result<()> {
    let results = dir.join("results.csv");
    eval::write_results_csv(cells, fs::File::create(&results).with_context(|| format!("creating {}", results.display()))?)?;
    let summary = dir.join("summary.csv");
    eval::write_summary_csv(cells, fs::File::create(&summary).with_context(|| format!("creating {}", summary.display()))?)?;
    Ok(())
}

/// Per-mode QuAIL − MLP differences (percentage points) across datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementSummary {
    pub mode: CorruptionMode,
    pub per_dataset: Vec<(String, f64)>,
    pub trimmed_mean: f64,
}

pub fn improvements(cells: &[CellResult]) -> anyhow::Result<Vec<ImprovementSummary>> {
    let mut grid: BTreeMap<(CorruptionMode, &str), BTreeMap<ModelKind, f64>> = BTreeMap::new();
    for c in cells {
        grid.entry((c.mode, &c.dataset)).or_default().insert(c.model, c.mean);
    }
    let mut out = Vec::new();
    for mode in CorruptionMode::ALL {
        let per_dataset: Vec<(String, f64)> = grid
            .range((mode, "")..)
            .take_while(|((m, _), _)| *m == mode)
            .filter_map(|((_, d), row)| match (row.get(&ModelKind::Quail), row.get(&ModelKind::Mlp)) {
                (Some(q), Some(b)) => Some((d.to_string(), eval::relative_improvement(100.0 * q, 100.0 * b))),
                _ => None,
            })
            .collect();
        if per_dataset.is_empty() {
            continue;
        }
        let diffs: Vec<f64> = per_dataset.iter().map(|(_, v)| *v).collect();
        out.push(ImprovementSummary {
            mode,
            trimmed_mean: eval::trimmed_mean(&diffs, eval::DEFAULT_TRIM)?,
            per_dataset,
        });
    }
    Ok(out)
}

/// Rebuilds the result tables from the ledgers in `output_dir/ledgers`.
pub fn cmd_report(output_dir: &Path) -> anyhow::Result<StudyReport> {
    let dir = ledger_dir(output_dir);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(UsageError(format!("no ledgers in {}", dir.display())).into());
    }
    let mut seen = BTreeMap::new();
    let mut studies = Vec::new();
    for path in paths {
        let (header, trials) = search::read_ledger(&path)?;
        let key = (header.dataset.clone(), header.mode, header.model);
        if let Some(prev) = seen.insert(key, path.clone()) {
            return Err(UsageError(format!(
                "{} and {} record the same (dataset, mode, model)",
                prev.display(),
                path.display()
            ))
            .into());
        }
        if trials.len() < header.options.n_trials {
            log::warn!("{}: {} of {} trials recorded", path.display(), trials.len(), header.options.n_trials);
        }
        let study = search::Study {
            dataset: header.dataset.clone(),
            mode: header.mode,
            model: header.model,
            trials,
        };
        studies.push(StudyRecord {
            dataset: header.dataset,
            mode: header.mode,
            model: header.model,
            ledger: path,
            best: study.best().cloned(),
            failed: study.n_failed(),
        });
    }
    let cells = collect_cells(&studies);
    write_tables(output_dir, &cells)?;
    Ok(StudyReport { studies, cells })
}

/// Plain-text table of best-trial test metrics and improvements.
pub fn render_report(report: &StudyReport) -> anyhow::Result<String> {
    let mut s = String::new();
    writeln!(s, "{:<16} {:<6} {:<11} {:>8} {:>7} {:>7}", "dataset", "mode", "model", "test", "std", "failed")?;
    for st in &report.studies {
        let (mean, std) = match &st.best {
            Some(b) => (eval::pct(eval::mean(&b.test)), eval::pct(data::sample_std(&b.test))),
            None => ("-".into(), "-".into()),
        };
        writeln!(
            s,
            "{:<16} {:<6} {:<11} {:>8} {:>7} {:>7}",
            st.dataset,
            st.mode.as_str(),
            st.model.as_str(),
            mean,
            std,
            st.failed
        )?;
    }
    for imp in improvements(&report.cells)? {
        writeln!(s, "\n{} improvement (quail - mlp, points):", imp.mode)?;
        for (d, v) in &imp.per_dataset {
            writeln!(s, "  {d:<16} {v:+.2}")?;
        }
        writeln!(s, "  trimmed mean     {:+.2}", imp.trimmed_mean)?;
    }
    Ok(s)
}

/// Runs the finite-difference check; returns the reports and the largest
/// scaled error.
pub fn cmd_gradcheck(cases: usize, seed: u64) -> anyhow::Result<(Vec<gradcheck::CaseReport>, f64)> {
    if cases == 0 {
        return Err(UsageError("at least one case is required".into()).into());
    }
    let reports = gradcheck::run(cases, seed)?;
    let worst = reports.iter().map(|r| r.max_scaled_error).fold(0.0, f64::max);
    Ok((reports, worst))
}
