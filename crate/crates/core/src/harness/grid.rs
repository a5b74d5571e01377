use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::privacy::{Epsilon, Strategy};
use crate::recsys::{ModelKind, RecModelConfig};
use crate::{Error, Result};

/// Which records feed the stereotype index of a fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringMode {
    #[default]
    Train,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub betas: Vec<f64>,
    pub epsilons: Vec<Epsilon>,
    pub folds: usize,
    pub models: Vec<ModelKind>,
    pub strategies: Vec<Strategy>,
    pub base_seed: u64,
    /// Keyed `"eps=E,beta=B"` (plus an optional `"default"`).
    pub model_configs: BTreeMap<String, RecModelConfig>,
    pub attack_config: AttackConfig,
    pub scoring_subset: ScoringMode,
    /// Overrides the dataset name in the output.
    pub dataset_name: Option<String>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            betas: (0..=10).rev().map(|i| f64::from(i) / 10.0).collect(),
            epsilons: [3.0, 2.0, 1.0, 0.1]
                .into_iter()
                .map(|e| Epsilon::new(e).expect("positive"))
                .collect(),
            folds: 5,
            models: vec![ModelKind::MetaMF, ModelKind::NoMetaMF],
            strategies: vec![Strategy::Targeted, Strategy::Random],
            base_seed: 0,
            model_configs: BTreeMap::new(),
            attack_config: AttackConfig::default(),
            scoring_subset: ScoringMode::Train,
            dataset_name: None,
        }
    }
}

fn parse_anchor(key: &str) -> Option<(Epsilon, f64)> {
    let mut eps = None;
    let mut beta = None;
    for part in key.split(',') {
        let (k, v) = part.split_once('=')?;
        match k.trim() {
            "eps" | "epsilon" => eps = v.trim().parse::<Epsilon>().ok(),
            "beta" => beta = v.trim().parse::<f64>().ok(),
            _ => return None,
        }
    }
    Some((eps?, beta?))
}

impl GridSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let spec: Self = serde_json::from_reader(std::fs::File::open(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.epsilons.is_empty() || self.models.is_empty() || self.strategies.is_empty() {
            return Err(Error::invalid("grid lists must be nonempty"));
        }
        if self.folds == 0 {
            return Err(Error::invalid("grid needs at least one fold"));
        }
        if let Some(b) = self.betas.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::invalid(format!("beta {b} outside [0, 1]")));
        }
        for key in self.model_configs.keys() {
            if key != "default" && parse_anchor(key).is_none() {
                return Err(Error::invalid(format!("bad model_configs key {key:?}")));
            }
        }
        for cfg in self.model_configs.values() {
            cfg.validate()?;
        }
        self.attack_config.validate()
    }

    /// Hyperparameters for a cell: the `(ε, anchor β)` entry, where the
    /// anchor is 1 for `β >= 0.5` and 0 otherwise; then `"default"`, then
    /// built-in defaults.
    pub fn model_config(&self, epsilon: Epsilon, beta: f64) -> RecModelConfig {
        let anchor = if beta >= 0.5 { 1.0 } else { 0.0 };
        self.model_configs
            .iter()
            .find(|(k, _)| parse_anchor(k) == Some((epsilon, anchor)))
            .or_else(|| self.model_configs.get_key_value("default"))
            .map(|(_, c)| c.clone())
            .unwrap_or_default()
    }
}

pub fn anchor_key(epsilon: Epsilon, beta: f64) -> String {
    format!("eps={epsilon},beta={beta}")
}
