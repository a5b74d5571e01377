//! Hypernetwork-personalized rating predictors.
//!
//! A user embedding is mixed through a shared memory matrix into a
//! collaborative vector. Two MLP heads map that vector to the weights of a
//! small per-user prediction network and to a per-user transform of the
//! shared item features. With meta-learning disabled both head outputs are
//! wrapped in a stop-gradient, so only the item features train.

mod state_io;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{RatingDataset, RatingRecord, RatingScale};
use crate::seed;
use crate::tensor::{Adam, AdamState, Gradients, Graph, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result};

pub use state_io::{read_state, write_state, STATE_MAGIC, STATE_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    MetaMF,
    NoMetaMF,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::MetaMF => "metamf",
            ModelKind::NoMetaMF => "nometamf",
        }
    }

    pub fn meta_enabled(self) -> bool {
        self == ModelKind::MetaMF
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "metamf" => Ok(ModelKind::MetaMF),
            "nometamf" => Ok(ModelKind::NoMetaMF),
            other => Err(Error::invalid(format!("unknown model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecModelConfig {
    pub user_embedding_dim: usize,
    pub collaborative_dim: usize,
    /// Width of the shared item features and of the transformed item vector.
    pub item_feature_dim: usize,
    pub hypernet_hidden_dim: usize,
    pub prediction_hidden_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub meta_enabled: bool,
}

impl Default for RecModelConfig {
    fn default() -> Self {
        Self {
            user_embedding_dim: 32,
            collaborative_dim: 32,
            item_feature_dim: 16,
            hypernet_hidden_dim: 32,
            prediction_hidden_dim: 32,
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 50,
            seed: 0,
            meta_enabled: true,
        }
    }
}

impl RecModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.user_embedding_dim,
            self.collaborative_dim,
            self.item_feature_dim,
            self.hypernet_hidden_dim,
            self.prediction_hidden_dim,
            self.batch_size,
        ];
        if dims.contains(&0) {
            return Err(Error::invalid("model dimensions and batch size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }

    /// Length of the generated prediction-network parameter vector:
    /// `W1 (h x r)`, `b1 (h)`, `W2 (h)`, `b2 (1)`.
    pub fn prediction_params_len(&self) -> usize {
        let (h, r) = (self.prediction_hidden_dim, self.item_feature_dim);
        h * r + 2 * h + 1
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_reader(std::fs::File::open(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parameter handles, in registration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamIds {
    pub user_embeddings: ParamId,
    pub memory: ParamId,
    pub head_a_w1: ParamId,
    pub head_a_b1: ParamId,
    pub head_a_w2: ParamId,
    pub head_a_b2: ParamId,
    pub head_b_w1: ParamId,
    pub head_b_b1: ParamId,
    pub head_b_w2: ParamId,
    pub head_b_b2: ParamId,
    pub item_features: ParamId,
}

impl ParamIds {
    fn resolve(store: &ParamStore) -> Result<Self> {
        let f = |n: &str| {
            store
                .find(n)
                .ok_or_else(|| Error::invalid(format!("missing parameter {n}")))
        };
        Ok(Self {
            user_embeddings: f("user_embeddings")?,
            memory: f("memory")?,
            head_a_w1: f("head_a.w1")?,
            head_a_b1: f("head_a.b1")?,
            head_a_w2: f("head_a.w2")?,
            head_a_b2: f("head_a.b2")?,
            head_b_w1: f("head_b.w1")?,
            head_b_b1: f("head_b.b1")?,
            head_b_w2: f("head_b.w2")?,
            head_b_b2: f("head_b.b2")?,
            item_features: f("item_features")?,
        })
    }

    pub fn hypernet(&self) -> [ParamId; 8] {
        [
            self.head_a_w1,
            self.head_a_b1,
            self.head_a_w2,
            self.head_a_b2,
            self.head_b_w1,
            self.head_b_b1,
            self.head_b_w2,
            self.head_b_b2,
        ]
    }
}

/// Model parameters plus the sizes they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct RecModel {
    pub config: RecModelConfig,
    pub scale: RatingScale,
    pub num_users: usize,
    pub num_items: usize,
    pub params: ParamStore,
    pub ids: ParamIds,
}

impl RecModel {
    /// Seeded uniform initialization.
    pub fn init(config: &RecModelConfig, num_users: usize, num_items: usize, scale: RatingScale) -> Result<Self> {
        config.validate()?;
        if num_users == 0 || num_items == 0 {
            return Err(Error::Empty("model universe"));
        }
        let c = config;
        let mut rng = seed::rng(seed::derive(c.seed, &[seed::label("init")]));
        let (du, dc, r, hh) = (
            c.user_embedding_dim,
            c.collaborative_dim,
            c.item_feature_dim,
            c.hypernet_hidden_dim,
        );
        let pa = c.prediction_params_len();
        let mut s = ParamStore::new();
        let mut add = |name: &str, shape: &[usize], fan_in: usize| {
            s.add(name, Tensor::uniform(shape, fan_in, &mut rng));
        };
        add("user_embeddings", &[num_users, du], du);
        add("memory", &[du, dc], du);
        add("head_a.w1", &[dc, hh], dc);
        add("head_a.b1", &[hh], dc);
        add("head_a.w2", &[hh, pa], hh);
        add("head_a.b2", &[pa], hh);
        add("head_b.w1", &[dc, hh], dc);
        add("head_b.b1", &[hh], dc);
        add("head_b.w2", &[hh, r * r], hh);
        add("head_b.b2", &[r * r], hh);
        add("item_features", &[num_items, r], r);
        Self::from_params(config.clone(), scale, num_users, num_items, s)
    }

    /// Wraps an existing store, checking every shape against the config.
    pub fn from_params(
        config: RecModelConfig,
        scale: RatingScale,
        num_users: usize,
        num_items: usize,
        params: ParamStore,
    ) -> Result<Self> {
        config.validate()?;
        let ids = ParamIds::resolve(&params)?;
        let c = &config;
        let (du, dc, r, hh, pa) = (
            c.user_embedding_dim,
            c.collaborative_dim,
            c.item_feature_dim,
            c.hypernet_hidden_dim,
            c.prediction_params_len(),
        );
        let expected: [(ParamId, Vec<usize>); 11] = [
            (ids.user_embeddings, vec![num_users, du]),
            (ids.memory, vec![du, dc]),
            (ids.head_a_w1, vec![dc, hh]),
            (ids.head_a_b1, vec![hh]),
            (ids.head_a_w2, vec![hh, pa]),
            (ids.head_a_b2, vec![pa]),
            (ids.head_b_w1, vec![dc, hh]),
            (ids.head_b_b1, vec![hh]),
            (ids.head_b_w2, vec![hh, r * r]),
            (ids.head_b_b2, vec![r * r]),
            (ids.item_features, vec![num_items, r]),
        ];
        for (id, shape) in &expected {
            let t = params.get(*id);
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "model parameters",
                    lhs: t.shape().to_vec(),
                    rhs: shape.clone(),
                });
            }
            if !t.is_finite() {
                return Err(Error::NonFinite { op: "model parameters" });
            }
        }
        Ok(Self {
            config,
            scale,
            num_users,
            num_items,
            params,
            ids,
        })
    }

    fn check_ids(&self, users: &[usize], items: &[usize]) -> Result<()> {
        if users.len() != items.len() {
            return Err(Error::Shape {
                op: "forward",
                lhs: vec![users.len()],
                rhs: vec![items.len()],
            });
        }
        if users.is_empty() {
            return Err(Error::Empty("forward batch"));
        }
        if let Some(&u) = users.iter().find(|&&u| u >= self.num_users) {
            return Err(Error::UnknownUser(u));
        }
        if let Some(&i) = items.iter().find(|&&i| i >= self.num_items) {
            return Err(Error::UnknownItem(i));
        }
        Ok(())
    }

    /// Records the unclamped predictions for `(users[k], items[k])` on `g`;
    /// returns a `[batch]` node.
    pub fn forward_graph(&self, g: &mut Graph, users: &[usize], items: &[usize]) -> Result<Var> {
        self.check_ids(users, items)?;
        let c = &self.config;
        let (r, h) = (c.item_feature_dim, c.prediction_hidden_dim);
        let b = users.len();
        let p = |g: &mut Graph, id| g.param(&self.params, id);
        let ids = self.ids;

        let emb = p(g, ids.user_embeddings)?;
        let e = g.gather_rows(emb, users)?;
        let mem = p(g, ids.memory)?;
        let cm = g.matmul(e, mem)?;
        let cu = g.tanh(cm)?;

        let head = |g: &mut Graph, w1, b1, w2, b2| -> Result<Var> {
            let (w1, b1, w2, b2) = (p(g, w1)?, p(g, b1)?, p(g, w2)?, p(g, b2)?);
            let z = g.matmul(cu, w1)?;
            let z = g.add(z, b1)?;
            let z = g.relu(z)?;
            let o = g.matmul(z, w2)?;
            g.add(o, b2)
        };
        let mut gen_a = head(g, ids.head_a_w1, ids.head_a_b1, ids.head_a_w2, ids.head_a_b2)?;
        let mut gen_b = head(g, ids.head_b_w1, ids.head_b_b1, ids.head_b_w2, ids.head_b_b2)?;
        if !c.meta_enabled {
            gen_a = g.stop_gradient(gen_a)?;
            gen_b = g.stop_gradient(gen_b)?;
        }

        let feats = p(g, ids.item_features)?;
        let f = g.gather_rows(feats, items)?;
        let q = g.batched_matvec(gen_b, f, r, r)?;

        let w1 = g.slice_cols(gen_a, 0, h * r)?;
        let b1 = g.slice_cols(gen_a, h * r, h * r + h)?;
        let w2 = g.slice_cols(gen_a, h * r + h, h * r + 2 * h)?;
        let b2 = g.slice_cols(gen_a, h * r + 2 * h, h * r + 2 * h + 1)?;
        let z = g.batched_matvec(w1, q, h, r)?;
        let z = g.add(z, b1)?;
        let z = g.relu(z)?;
        let out = g.mul(w2, z)?;
        let out = g.sum_last(out)?;
        let b2 = g.reshape(b2, &[b])?;
        g.add(out, b2)
    }

    /// Unclamped predictions.
    pub fn predict_raw(&self, users: &[usize], items: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = self.forward_graph(&mut g, users, items)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Predictions clamped to the rating scale, evaluated in chunks.
    pub fn predict(&self, users: &[usize], items: &[usize]) -> Result<Vec<f64>> {
        const CHUNK: usize = 4096;
        if users.len() != items.len() {
            return Err(Error::Shape {
                op: "predict",
                lhs: vec![users.len()],
                rhs: vec![items.len()],
            });
        }
        let mut out = Vec::with_capacity(users.len());
        for (u, i) in users.chunks(CHUNK).zip(items.chunks(CHUNK)) {
            out.extend(self.predict_raw(u, i)?.into_iter().map(|x| self.scale.clamp(x)));
        }
        Ok(out)
    }

    /// Squared-error loss of one batch and its gradients.
    pub fn loss_and_gradients(&self, batch: &[RatingRecord]) -> Result<(f64, Gradients)> {
        let users: Vec<usize> = batch.iter().map(|r| r.user as usize).collect();
        let items: Vec<usize> = batch.iter().map(|r| r.item as usize).collect();
        let target: Vec<f64> = batch.iter().map(|r| f64::from(r.rating)).collect();
        let mut g = Graph::new();
        let pred = self.forward_graph(&mut g, &users, &items)?;
        let loss = g.mse(pred, &target)?;
        let value = g.value(loss).item();
        Ok((value, g.backward(loss)?))
    }
}

/// Mean absolute error; errors on empty or mismatched input.
pub fn mae(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape {
            op: "mae",
            lhs: vec![predictions.len()],
            rhs: vec![truths.len()],
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let s: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / predictions.len() as f64)
}

/// MAE of clamped predictions over `test`.
pub fn evaluate_mae(model: &RecModel, test: &RatingDataset) -> Result<f64> {
    evaluate_records(model, test.records())
}

pub fn evaluate_records(model: &RecModel, records: &[RatingRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let users: Vec<usize> = records.iter().map(|r| r.user as usize).collect();
    let items: Vec<usize> = records.iter().map(|r| r.item as usize).collect();
    let truths: Vec<f64> = records.iter().map(|r| f64::from(r.rating)).collect();
    mae(&model.predict(&users, &items)?, &truths)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `NaN` when there is no validation data.
    pub valid_mae: f64,
}

/// Per-batch view handed to training observers.
pub struct BatchEvent<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub model: &'a RecModel,
    pub gradients: &'a Gradients,
}

/// Trained model, optimizer state and per-epoch log.
#[derive(Debug, Clone, PartialEq)]
pub struct RecModelState {
    pub model: RecModel,
    pub optimizer: AdamState,
    pub log: Vec<EpochLog>,
    /// Epoch the parameters were taken from (1-based; 0 means untrained).
    pub best_epoch: usize,
}

impl RecModelState {
    pub fn best_valid_mae(&self) -> Option<f64> {
        self.log
            .iter()
            .find(|l| l.epoch == self.best_epoch)
            .map(|l| l.valid_mae)
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "valid_mae"])?;
        for l in &self.log {
            w.write_record([l.epoch.to_string(), l.train_loss.to_string(), l.valid_mae.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_state(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_state(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub fn train(train: &RatingDataset, valid: &RatingDataset, config: &RecModelConfig) -> Result<RecModelState> {
    train_observed(train, valid, config, |_| {})
}

/// Mini-batch Adam on squared error. Keeps the parameters of the epoch with
/// the lowest validation MAE (the last epoch when `valid` is empty).
pub fn train_observed<F>(
    train: &RatingDataset,
    valid: &RatingDataset,
    config: &RecModelConfig,
    mut observe: F,
) -> Result<RecModelState>
where
    F: FnMut(&BatchEvent<'_>),
{
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut model = RecModel::init(config, train.num_users(), train.num_items(), train.scale())?;
    let mut opt = Adam::new(&model.params, config.learning_rate);
    let mut order: Vec<RatingRecord> = train.records().to_vec();
    let mut rng = seed::rng(seed::derive(config.seed, &[seed::label("shuffle")]));

    let mut best = RecModelState {
        model: model.clone(),
        optimizer: opt.state.clone(),
        log: Vec::new(),
        best_epoch: 0,
    };
    let mut best_mae = f64::INFINITY;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, grads) = model.loss_and_gradients(batch).map_err(|e| divergence(e, epoch))?;
            observe(&BatchEvent {
                epoch,
                batch: batch_idx,
                loss,
                model: &model,
                gradients: &grads,
            });
            opt.step(&mut model.params, &grads)?;
            if model.params.values().iter().any(|t| !t.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;
        let valid_mae = if valid.is_empty() {
            f64::NAN
        } else {
            evaluate_mae(&model, valid).map_err(|e| divergence(e, epoch))?
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            valid_mae,
        });
        log::debug!("epoch {epoch}: train_loss={train_loss:.5} valid_mae={valid_mae:.5}");
        let better = if valid.is_empty() { true } else { valid_mae < best_mae };
        if better {
            best_mae = valid_mae;
            best.model = model.clone();
            best.optimizer = opt.state.clone();
            best.best_epoch = epoch;
        }
    }
    best.log = log;
    Ok(best)
}

fn divergence(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Divergence { epoch },
        other => other,
    }
}
