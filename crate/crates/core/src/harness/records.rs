use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::privacy::{Epsilon, Strategy};
use crate::recsys::ModelKind;
use crate::{Error, Result};

/// Protection applied in a cell; `None` marks the unprotected baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStrategy {
    None,
    Targeted,
    Random,
}

impl CellStrategy {
    pub fn name(self) -> &'static str {
        match self {
            CellStrategy::None => "none",
            CellStrategy::Targeted => "targeted",
            CellStrategy::Random => "random",
        }
    }

    pub fn protection(self) -> Option<Strategy> {
        match self {
            CellStrategy::None => None,
            CellStrategy::Targeted => Some(Strategy::Targeted),
            CellStrategy::Random => Some(Strategy::Random),
        }
    }
}

impl From<Strategy> for CellStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::Targeted => CellStrategy::Targeted,
            Strategy::Random => CellStrategy::Random,
        }
    }
}

impl fmt::Display for CellStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CellStrategy::None),
            other => other.parse::<Strategy>().map(Into::into),
        }
    }
}

/// Identity of one result row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub model: ModelKind,
    pub strategy: CellStrategy,
    pub epsilon: Epsilon,
    pub beta: f64,
    pub fold: usize,
}

impl CellKey {
    /// Hashable form; floats compared by bit pattern.
    pub fn id(&self) -> (ModelKind, CellStrategy, u64, u64, usize) {
        (
            self.model,
            self.strategy,
            self.epsilon.value().to_bits(),
            self.beta.to_bits(),
            self.fold,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub dataset: String,
    pub model: ModelKind,
    pub strategy: CellStrategy,
    pub epsilon: Epsilon,
    pub beta: f64,
    pub fold: usize,
    pub mae: f64,
    pub delta_mae_pct: f64,
    pub bacc: f64,
    pub delta_bacc_pct: f64,
    pub seed: u64,
    /// Empty on success.
    pub error: String,
}

impl ExperimentRecord {
    pub fn key(&self) -> CellKey {
        CellKey {
            model: self.model,
            strategy: self.strategy,
            epsilon: self.epsilon,
            beta: self.beta,
            fold: self.fold,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_empty()
    }

    pub fn is_baseline(&self) -> bool {
        self.strategy == CellStrategy::None
    }
}

pub const RESULTS_HEADER: [&str; 12] = [
    "dataset",
    "model",
    "strategy",
    "epsilon",
    "beta",
    "fold",
    "mae",
    "delta_mae_pct",
    "bacc",
    "delta_bacc_pct",
    "seed",
    "error",
];

/// Shortest round-trip formatting; non-finite values become empty fields.
pub(crate) fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

pub(crate) fn parse_num(s: &str) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| Error::invalid(format!("bad number {s:?}")))
}

fn to_row(r: &ExperimentRecord) -> [String; 12] {
    [
        r.dataset.clone(),
        r.model.name().to_string(),
        r.strategy.name().to_string(),
        r.epsilon.to_string(),
        fmt_num(r.beta),
        r.fold.to_string(),
        fmt_num(r.mae),
        fmt_num(r.delta_mae_pct),
        fmt_num(r.bacc),
        fmt_num(r.delta_bacc_pct),
        r.seed.to_string(),
        r.error.clone(),
    ]
}

fn from_row(row: &csv::StringRecord, line: usize, path: &Path) -> Result<ExperimentRecord> {
    let err = |m: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: m,
    };
    if row.len() != RESULTS_HEADER.len() {
        return Err(err(format!(
            "expected {} fields, got {}",
            RESULTS_HEADER.len(),
            row.len()
        )));
    }
    let f = |i: usize| &row[i];
    let wrap = |e: Error| err(e.to_string());
    Ok(ExperimentRecord {
        dataset: f(0).to_string(),
        model: f(1).parse().map_err(wrap)?,
        strategy: f(2).parse().map_err(wrap)?,
        epsilon: f(3).parse().map_err(wrap)?,
        beta: parse_num(f(4)).map_err(wrap)?,
        fold: f(5).parse().map_err(|_| err(format!("bad fold {:?}", f(5))))?,
        mae: parse_num(f(6)).map_err(wrap)?,
        delta_mae_pct: parse_num(f(7)).map_err(wrap)?,
        bacc: parse_num(f(8)).map_err(wrap)?,
        delta_bacc_pct: parse_num(f(9)).map_err(wrap)?,
        seed: f(10).parse().map_err(|_| err(format!("bad seed {:?}", f(10))))?,
        error: f(11).to_string(),
    })
}

pub fn write_results(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in records {
        w.write_record(to_row(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Appends rows to an existing results file (header already present).
pub fn append_results(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let file = std::fs::OpenOptions::new().append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    for r in records {
        w.write_record(to_row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().ne(RESULTS_HEADER.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        out.push(from_row(&row?, i + 2, path)?);
    }
    Ok(out)
}

/// `100 (value - baseline) / baseline`.
pub fn delta_pct(value: f64, baseline: f64) -> Result<f64> {
    if baseline.is_finite() && baseline > 0.0 {
        Ok(100.0 * (value - baseline) / baseline)
    } else {
        Err(Error::NonPositiveBaseline(baseline))
    }
}
