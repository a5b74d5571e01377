use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use super::grid::{GridSpec, ScoringMode};
use super::records::{
    append_results, delta_pct, fmt_num, parse_num, read_results, write_results, CellStrategy, ExperimentRecord,
};
use crate::attack::{run_attack_with, AttackConfig, AttackResult};
use crate::dataset::{make_splits, AttributeTable, RatingDataset, RatingRecord, Split, SplitAssignment};
use crate::exec::{current_num_threads, Exec};
use crate::privacy::{protect_dataset_with, Epsilon, PrivacyConfig, ProtectionOutcome};
use crate::recsys::{evaluate_mae, train, ModelKind};
use crate::seed::{derive, label};
use crate::stereotype::{build_index, ScoringSubset, StereotypeIndex};
use crate::{Error, Result};

/// Input dataset of a grid run.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub name: String,
    pub dataset: RatingDataset,
    pub attributes: AttributeTable,
}

/// Seed sub-streams. Training and attack seeds do not depend on the
/// protection settings, so a cell whose protection is the identity
/// reproduces the baseline exactly.
pub mod seeds {
    use super::*;

    pub fn split(base: u64) -> u64 {
        derive(base, &[label("split")])
    }

    pub fn protection(base: u64, strategy: CellStrategy, epsilon: Epsilon, beta: f64, fold: usize) -> u64 {
        derive(
            base,
            &[
                label("protect"),
                label(strategy.name()),
                epsilon.value().to_bits(),
                beta.to_bits(),
                fold as u64,
            ],
        )
    }

    pub fn training(base: u64, model: ModelKind, fold: usize) -> u64 {
        derive(base, &[label("train"), label(model.name()), fold as u64])
    }

    pub fn attack(base: u64, fold: usize) -> u64 {
        derive(base, &[label("attack"), fold as u64])
    }

    /// Identifier stored in the `seed` column.
    pub fn cell(base: u64, model: ModelKind, strategy: CellStrategy, epsilon: Epsilon, beta: f64, fold: usize) -> u64 {
        derive(
            base,
            &[
                label(model.name()),
                label(strategy.name()),
                epsilon.value().to_bits(),
                beta.to_bits(),
                fold as u64,
            ],
        )
    }
}

/// One protection setting on one fold; every model is trained on it and the
/// attacker runs on it once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unit {
    pub strategy: CellStrategy,
    pub epsilon: Epsilon,
    pub beta: f64,
    pub fold: usize,
}

impl Unit {
    pub fn baseline(fold: usize) -> Self {
        Self {
            strategy: CellStrategy::None,
            epsilon: Epsilon::INFINITY,
            beta: 1.0,
            fold,
        }
    }
}

/// Baselines of every fold first, then fold by strategy by ε by β.
pub fn plan_units(grid: &GridSpec) -> Vec<Unit> {
    let mut units: Vec<Unit> = (0..grid.folds).map(Unit::baseline).collect();
    for fold in 0..grid.folds {
        for &s in &grid.strategies {
            for &epsilon in &grid.epsilons {
                for &beta in &grid.betas {
                    units.push(Unit {
                        strategy: s.into(),
                        epsilon,
                        beta,
                        fold,
                    });
                }
            }
        }
    }
    units
}

/// Split parts and stereotype index of one fold.
#[derive(Debug, Clone)]
pub struct FoldContext {
    pub assignment: SplitAssignment,
    pub train: RatingDataset,
    pub validation: RatingDataset,
    pub test: RatingDataset,
    pub index: StereotypeIndex,
}

pub fn prepare_folds(grid: &GridSpec, data: &ExperimentData) -> Result<Vec<FoldContext>> {
    let splits = make_splits(&data.dataset, grid.folds, seeds::split(grid.base_seed))?;
    splits
        .into_iter()
        .map(|assignment| {
            let train = assignment.subset(&data.dataset, Split::Train)?;
            let index = match grid.scoring_subset {
                ScoringMode::Train => {
                    build_index(&train, &data.attributes, ScoringSubset::Train { fold: assignment.fold })?
                }
                ScoringMode::Full => build_index(&data.dataset, &data.attributes, ScoringSubset::Full)?,
            };
            Ok(FoldContext {
                validation: assignment.subset(&data.dataset, Split::Validation)?,
                test: assignment.subset(&data.dataset, Split::Test)?,
                train,
                assignment,
                index,
            })
        })
        .collect()
}

/// Protection of the full dataset for `unit`; `None` for the baseline.
pub fn protect_unit(
    grid: &GridSpec,
    data: &ExperimentData,
    ctx: &FoldContext,
    unit: &Unit,
) -> Result<Option<ProtectionOutcome>> {
    let Some(strategy) = unit.strategy.protection() else {
        return Ok(None);
    };
    let cfg = PrivacyConfig::new(
        unit.epsilon,
        unit.beta,
        strategy,
        seeds::protection(grid.base_seed, unit.strategy, unit.epsilon, unit.beta, unit.fold),
    )?;
    protect_dataset_with(
        &data.dataset,
        &data.attributes,
        Some(&ctx.index),
        &cfg,
        Exec::Sequential,
    )
    .map(Some)
}

/// The fold's training records after protection, record by record.
pub fn protected_train_set(
    data: &ExperimentData,
    ctx: &FoldContext,
    outcome: &ProtectionOutcome,
) -> Result<RatingDataset> {
    let mut moved: HashMap<(u32, u32), RatingRecord> = HashMap::new();
    for p in &outcome.profiles {
        for r in &p.replaced {
            moved.insert(
                (r.original.user, r.original.item),
                RatingRecord::new(r.original.user, r.new_item, r.new_rating),
            );
        }
    }
    let records = data
        .dataset
        .records()
        .iter()
        .zip(&ctx.assignment.assignment)
        .filter(|(_, &s)| s == Split::Train)
        .map(|(r, _)| moved.get(&(r.user, r.item)).copied().unwrap_or(*r))
        .collect();
    ctx.train.with_records(records)
}

/// One attack run as stored in the side file.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackRunRecord {
    pub strategy: CellStrategy,
    pub epsilon: Epsilon,
    pub beta: f64,
    pub fold: usize,
    pub run: usize,
    pub seed: u64,
    pub bacc: f64,
}

const ATTACK_RUNS_HEADER: [&str; 7] = ["strategy", "epsilon", "beta", "fold", "run", "seed", "bacc"];

/// `results.csv` -> `results_attack_runs.csv` in the same directory.
pub fn attack_runs_path(results: &Path) -> PathBuf {
    let stem = results
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".into());
    results.with_file_name(format!("{stem}_attack_runs.csv"))
}

pub fn read_attack_runs(path: &Path) -> Result<Vec<AttackRunRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let err = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: m,
        };
        if row.len() != ATTACK_RUNS_HEADER.len() {
            return Err(err("wrong field count".into()));
        }
        let wrap = |e: Error| err(e.to_string());
        out.push(AttackRunRecord {
            strategy: row[0].parse().map_err(wrap)?,
            epsilon: row[1].parse().map_err(wrap)?,
            beta: parse_num(&row[2]).map_err(wrap)?,
            fold: row[3].parse().map_err(|_| err("bad fold".into()))?,
            run: row[4].parse().map_err(|_| err("bad run".into()))?,
            seed: row[5].parse().map_err(|_| err("bad seed".into()))?,
            bacc: parse_num(&row[6]).map_err(wrap)?,
        });
    }
    Ok(out)
}

fn write_attack_runs(path: &Path, rows: &[AttackRunRecord], header: bool) -> Result<()> {
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(!header)
        .write(true)
        .truncate(header)
        .open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if header {
        w.write_record(ATTACK_RUNS_HEADER)?;
    }
    for r in rows {
        w.write_record([
            r.strategy.name().to_string(),
            r.epsilon.to_string(),
            fmt_num(r.beta),
            r.fold.to_string(),
            r.run.to_string(),
            r.seed.to_string(),
            fmt_num(r.bacc),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    /// Every row of the results file, in file order.
    pub records: Vec<ExperimentRecord>,
    pub attack_runs: Vec<AttackRunRecord>,
    pub units_run: usize,
    pub models_trained: usize,
}

struct UnitOutput {
    records: Vec<ExperimentRecord>,
    attack: Option<AttackResult>,
    models_trained: usize,
}

fn run_unit(grid: &GridSpec, data: &ExperimentData, name: &str, ctx: &FoldContext, unit: &Unit) -> UnitOutput {
    let seed_of = |m: ModelKind| seeds::cell(grid.base_seed, m, unit.strategy, unit.epsilon, unit.beta, unit.fold);
    let blank = |m: ModelKind, error: String| ExperimentRecord {
        dataset: name.to_string(),
        model: m,
        strategy: unit.strategy,
        epsilon: unit.epsilon,
        beta: unit.beta,
        fold: unit.fold,
        mae: f64::NAN,
        delta_mae_pct: f64::NAN,
        bacc: f64::NAN,
        delta_bacc_pct: f64::NAN,
        seed: seed_of(m),
        error,
    };
    let fail = |e: Error| UnitOutput {
        records: grid.models.iter().map(|&m| blank(m, e.to_string())).collect(),
        attack: None,
        models_trained: 0,
    };

    let protected = match protect_unit(grid, data, ctx, unit) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let (train_set, attacked) = match &protected {
        None => (ctx.train.clone(), &data.dataset),
        Some(out) => match protected_train_set(data, ctx, out) {
            Ok(t) => (t, &out.dataset),
            Err(e) => return fail(e),
        },
    };

    let attack_cfg = AttackConfig {
        seed: seeds::attack(grid.base_seed, unit.fold),
        ..grid.attack_config.clone()
    };
    let attack = run_attack_with(attacked, &data.attributes, &attack_cfg, Exec::Sequential);
    let (bacc, attack_err) = match &attack {
        Ok(r) => (r.mean_bacc, None),
        Err(e) => (f64::NAN, Some(format!("attack: {e}"))),
    };

    let mut records = Vec::with_capacity(grid.models.len());
    let mut trained = 0;
    for &model in &grid.models {
        let mut cfg = grid.model_config(unit.epsilon, unit.beta);
        cfg.seed = seeds::training(grid.base_seed, model, unit.fold);
        cfg.meta_enabled = model.meta_enabled();
        trained += 1;
        let mae = train(&train_set, &ctx.validation, &cfg).and_then(|s| evaluate_mae(&s.model, &ctx.test));
        let mut rec = blank(model, String::new());
        rec.bacc = bacc;
        let mut errors: Vec<String> = attack_err.iter().cloned().collect();
        match mae {
            Ok(v) => rec.mae = v,
            Err(e) => errors.push(format!("train: {e}")),
        }
        rec.error = errors.join("; ");
        records.push(rec);
    }
    log::info!(
        "fold {} {} eps={} beta={}: bacc={:.4}",
        unit.fold,
        unit.strategy,
        unit.epsilon,
        unit.beta,
        bacc
    );
    UnitOutput {
        records,
        attack: attack.ok(),
        models_trained: trained,
    }
}

fn note_baseline(r: &ExperimentRecord, b: &mut HashMap<(ModelKind, usize), (f64, f64)>) {
    if r.is_baseline() && r.is_ok() {
        b.insert((r.model, r.fold), (r.mae, r.bacc));
    }
}

fn fill_deltas(rec: &mut ExperimentRecord, baselines: &HashMap<(ModelKind, usize), (f64, f64)>) {
    if rec.is_baseline() {
        if rec.is_ok() {
            rec.delta_mae_pct = 0.0;
            rec.delta_bacc_pct = 0.0;
        }
        return;
    }
    let Some(&(mae0, bacc0)) = baselines.get(&(rec.model, rec.fold)) else {
        if rec.is_ok() {
            rec.error = "baseline unavailable".into();
        }
        return;
    };
    if let Ok(d) = delta_pct(rec.mae, mae0) {
        rec.delta_mae_pct = if rec.mae.is_finite() { d } else { f64::NAN };
    }
    if let Ok(d) = delta_pct(rec.bacc, bacc0) {
        rec.delta_bacc_pct = if rec.bacc.is_finite() { d } else { f64::NAN };
    }
}

/// Runs every pending unit of the grid, appending to `out` after each batch.
/// Rows already present in `out` are kept and their units skipped.
pub fn run_grid(grid: &GridSpec, data: &ExperimentData, out: &Path, exec: Exec) -> Result<GridOutcome> {
    grid.validate()?;
    data.attributes.require_both_groups()?;
    if data.attributes.len() != data.dataset.num_users() {
        return Err(Error::invalid("attribute table does not match dataset"));
    }
    let name = grid.dataset_name.clone().unwrap_or_else(|| data.name.clone());
    let runs_path = attack_runs_path(out);

    let existed = out.exists();
    let mut records = if existed {
        read_results(out)?
    } else {
        write_results(out, &[])?;
        Vec::new()
    };
    let mut attack_runs = if existed && runs_path.exists() {
        read_attack_runs(&runs_path)?
    } else {
        write_attack_runs(&runs_path, &[], true)?;
        Vec::new()
    };

    let done: HashSet<_> = records.iter().map(|r| r.key().id()).collect();
    let complete = |u: &Unit| {
        grid.models.iter().all(|&m| {
            let key = super::records::CellKey {
                model: m,
                strategy: u.strategy,
                epsilon: u.epsilon,
                beta: u.beta,
                fold: u.fold,
            };
            done.contains(&key.id())
        })
    };
    let pending: Vec<Unit> = plan_units(grid).into_iter().filter(|u| !complete(u)).collect();

    let mut baselines: HashMap<(ModelKind, usize), (f64, f64)> = HashMap::new();
    for r in &records {
        note_baseline(r, &mut baselines);
    }

    let mut outcome_units = 0;
    let mut trained = 0;
    if !pending.is_empty() {
        let folds = prepare_folds(grid, data)?;
        let width = if exec.is_parallel() {
            current_num_threads().max(1)
        } else {
            1
        };
        log::info!("{} units pending, batches of {}", pending.len(), width);
        for batch in pending.chunks(width) {
            let outputs = exec.map(batch, |u| run_unit(grid, data, &name, &folds[u.fold], u));
            let mut new_records = Vec::new();
            let mut new_runs = Vec::new();
            for (u, o) in batch.iter().zip(outputs) {
                for r in &o.records {
                    note_baseline(r, &mut baselines);
                }
                new_records.extend(o.records);
                trained += o.models_trained;
                outcome_units += 1;
                if let Some(a) = o.attack {
                    new_runs.extend(a.per_run.iter().map(|r| AttackRunRecord {
                        strategy: u.strategy,
                        epsilon: u.epsilon,
                        beta: u.beta,
                        fold: u.fold,
                        run: r.run,
                        seed: r.seed,
                        bacc: r.bacc,
                    }));
                }
            }
            for r in &mut new_records {
                fill_deltas(r, &baselines);
            }
            append_results(out, &new_records)?;
            write_attack_runs(&runs_path, &new_runs, false)?;
            records.extend(new_records);
            attack_runs.extend(new_runs);
        }
    }
    Ok(GridOutcome {
        records,
        attack_runs,
        units_run: outcome_units,
        models_trained: trained,
    })
}
