use std::path::Path;

use super::records::{fmt_num, CellStrategy, ExperimentRecord};
use crate::attack::mean_std;
use crate::privacy::Epsilon;
use crate::recsys::ModelKind;
use crate::Result;

/// Two objectives, both minimized.
pub trait Objectives {
    fn mae(&self) -> f64;
    fn bacc(&self) -> f64;
}

impl Objectives for ExperimentRecord {
    fn mae(&self) -> f64 {
        self.mae
    }
    fn bacc(&self) -> f64 {
        self.bacc
    }
}

impl Objectives for (f64, f64) {
    fn mae(&self) -> f64 {
        self.0
    }
    fn bacc(&self) -> f64 {
        self.1
    }
}

/// `a` is no worse on both objectives and strictly better on one.
pub fn dominates<T: Objectives>(a: &T, b: &T) -> bool {
    a.mae() <= b.mae() && a.bacc() <= b.bacc() && (a.mae() < b.mae() || a.bacc() < b.bacc())
}

/// Indices of the non-dominated points with finite objectives, sorted by MAE
/// then BAcc then input position.
pub fn pareto_indices<T: Objectives>(points: &[T]) -> Vec<usize> {
    let finite: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].mae().is_finite() && points[i].bacc().is_finite())
        .collect();
    let mut order = finite.clone();
    order.sort_by(|&a, &b| {
        points[a]
            .mae()
            .total_cmp(&points[b].mae())
            .then(points[a].bacc().total_cmp(&points[b].bacc()))
            .then(a.cmp(&b))
    });
    // Sweep by MAE: a point survives when no earlier point beats its BAcc,
    // except for exact duplicates of a survivor.
    let mut out: Vec<usize> = Vec::new();
    let mut best_bacc = f64::INFINITY;
    let mut last: Option<(f64, f64)> = None;
    for i in order {
        let p = (points[i].mae(), points[i].bacc());
        if p.1 < best_bacc || last == Some(p) {
            out.push(i);
            best_bacc = best_bacc.min(p.1);
            last = Some(p);
        }
    }
    out
}

/// Non-dominated, error-free records sorted by MAE ascending.
pub fn pareto_frontier<T: Objectives + Clone>(records: &[T]) -> Vec<T> {
    pareto_indices(records)
        .into_iter()
        .map(|i| records[i].clone())
        .collect()
}

/// Mean and sample standard deviation of one column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub model: ModelKind,
    pub strategy: CellStrategy,
    pub epsilon: Epsilon,
    pub beta: f64,
    /// Error-free records aggregated.
    pub n: usize,
    pub mae: Stat,
    pub delta_mae_pct: Stat,
    pub bacc: Stat,
    pub delta_bacc_pct: Stat,
}

impl Objectives for SummaryRow {
    fn mae(&self) -> f64 {
        self.mae.mean
    }
    fn bacc(&self) -> f64 {
        self.bacc.mean
    }
}

/// Groups error-free records by (dataset, model, strategy, ε, β) in order of
/// first appearance.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    let mut groups: Vec<(ExperimentRecord, Vec<&ExperimentRecord>)> = Vec::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        let same = |g: &ExperimentRecord| {
            g.dataset == r.dataset
                && g.model == r.model
                && g.strategy == r.strategy
                && g.epsilon.value().to_bits() == r.epsilon.value().to_bits()
                && g.beta.to_bits() == r.beta.to_bits()
        };
        match groups.iter_mut().find(|(g, _)| same(g)) {
            Some((_, members)) => members.push(r),
            None => groups.push((r.clone(), vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(g, members)| {
            let col = |f: fn(&ExperimentRecord) -> f64| Stat::of(&members.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                dataset: g.dataset,
                model: g.model,
                strategy: g.strategy,
                epsilon: g.epsilon,
                beta: g.beta,
                n: members.len(),
                mae: col(|r| r.mae),
                delta_mae_pct: col(|r| r.delta_mae_pct),
                bacc: col(|r| r.bacc),
                delta_bacc_pct: col(|r| r.delta_bacc_pct),
            }
        })
        .collect()
}

pub const SUMMARY_HEADER: [&str; 14] = [
    "dataset",
    "model",
    "strategy",
    "epsilon",
    "beta",
    "n",
    "mae_mean",
    "mae_std",
    "delta_mae_pct_mean",
    "delta_mae_pct_std",
    "bacc_mean",
    "bacc_std",
    "delta_bacc_pct_mean",
    "delta_bacc_pct_std",
];

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.model.name().to_string(),
            r.strategy.name().to_string(),
            r.epsilon.to_string(),
            fmt_num(r.beta),
            r.n.to_string(),
            fmt_num(r.mae.mean),
            fmt_num(r.mae.std),
            fmt_num(r.delta_mae_pct.mean),
            fmt_num(r.delta_mae_pct.std),
            fmt_num(r.bacc.mean),
            fmt_num(r.bacc.std),
            fmt_num(r.delta_bacc_pct.mean),
            fmt_num(r.delta_bacc_pct.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}
