//! Attribute-inference attacker: a one-hidden-layer ReLU classifier over raw
//! rating vectors, scored with balanced accuracy.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_sizes, AttributeTable, RatingDataset};
use crate::exec::Exec;
use crate::seed;
use crate::tensor::{Adam, Graph, ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub runs: usize,
    pub seed: u64,
    /// Split redraws allowed before giving up on a run.
    pub max_split_retries: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            runs: 10,
            seed: 0,
            max_split_retries: 100,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::invalid("attack runs must be >= 1"));
        }
        if self.hidden_dim == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("attack hidden_dim, batch_size and epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("attack learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackRun {
    pub run: usize,
    pub seed: u64,
    pub bacc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub per_run: Vec<AttackRun>,
    pub mean_bacc: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_bacc: f64,
}

impl AttackResult {
    pub fn from_runs(per_run: Vec<AttackRun>) -> Self {
        let values: Vec<f64> = per_run.iter().map(|r| r.bacc).collect();
        let (mean_bacc, std_bacc) = mean_std(&values);
        Self {
            per_run,
            mean_bacc,
            std_bacc,
        }
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["run", "seed", "bacc"])?;
        for r in &self.per_run {
            w.write_record([r.run.to_string(), r.seed.to_string(), r.bacc.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean and sample standard deviation (`n - 1` denominator, 0 when `n < 2`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Rating vector of `user` over all items; unrated positions are 0.
pub fn featurize(ds: &RatingDataset, user: usize) -> Result<Vec<f64>> {
    ds.check_user(user)?;
    let mut v = vec![0.0; ds.num_items()];
    for r in ds.profile(user) {
        v[r.item as usize] = f64::from(r.rating);
    }
    Ok(v)
}

/// `[num_users, num_items]` feature matrix.
pub fn feature_matrix(ds: &RatingDataset) -> Tensor {
    let mut data = vec![0.0; ds.num_users() * ds.num_items()];
    for r in ds.records() {
        data[r.user as usize * ds.num_items() + r.item as usize] = f64::from(r.rating);
    }
    Tensor::new(vec![ds.num_users(), ds.num_items()], data).expect("nonempty universe")
}

/// Mean of the per-class recalls for binary labels.
pub fn balanced_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape {
            op: "balanced_accuracy",
            lhs: vec![predictions.len()],
            rhs: vec![labels.len()],
        });
    }
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y > 1 {
            return Err(Error::invalid(format!("label {y} is not binary")));
        }
        totals[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    if totals.contains(&0) {
        return Err(Error::SingleClass);
    }
    Ok((hits[0] as f64 / totals[0] as f64 + hits[1] as f64 / totals[1] as f64) / 2.0)
}

/// User-level 60/20/20 partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles users and cuts 60/20/20, redrawing until every part holds both
/// classes.
pub fn user_split<R: rand::Rng + ?Sized>(labels: &[usize], max_retries: usize, rng: &mut R) -> Result<UserSplit> {
    let both = |idx: &[usize]| idx.iter().any(|&u| labels[u] == 0) && idx.iter().any(|&u| labels[u] == 1);
    let (n_train, n_valid, _) = split_sizes(labels.len());
    let mut users: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..=max_retries {
        users.shuffle(rng);
        let split = UserSplit {
            train: users[..n_train].to_vec(),
            validation: users[n_train..n_train + n_valid].to_vec(),
            test: users[n_train + n_valid..].to_vec(),
        };
        if both(&split.train) && both(&split.validation) && both(&split.test) {
            return Ok(split);
        }
    }
    Err(Error::SplitMissingClass { retries: max_retries })
}

struct Mlp {
    params: ParamStore,
}

impl Mlp {
    fn new(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut params = ParamStore::new();
        params.add("w1", Tensor::uniform(&[inputs, hidden], inputs, &mut rng));
        params.add("b1", Tensor::uniform(&[hidden], inputs, &mut rng));
        params.add("w2", Tensor::uniform(&[hidden, 2], hidden, &mut rng));
        params.add("b2", Tensor::uniform(&[2], hidden, &mut rng));
        Self { params }
    }

    fn logits(&self, g: &mut Graph, x: Tensor) -> Result<crate::tensor::Var> {
        let ids: Vec<_> = self.params.ids().collect();
        let x = g.input(x)?;
        let w1 = g.param(&self.params, ids[0])?;
        let b1 = g.param(&self.params, ids[1])?;
        let w2 = g.param(&self.params, ids[2])?;
        let b2 = g.param(&self.params, ids[3])?;
        let h = g.matmul(x, w1)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h)?;
        let o = g.matmul(h, w2)?;
        g.add(o, b2)
    }

    fn predict(&self, x: Tensor) -> Result<Vec<usize>> {
        let mut g = Graph::new();
        let out = self.logits(&mut g, x)?;
        Ok(g.value(out)
            .data()
            .chunks(2)
            .map(|c| usize::from(c[1] > c[0]))
            .collect())
    }
}

fn rows(features: &Tensor, users: &[usize]) -> Tensor {
    let d = features.shape()[1];
    let mut data = Vec::with_capacity(users.len() * d);
    for &u in users {
        data.extend_from_slice(&features.data()[u * d..(u + 1) * d]);
    }
    Tensor::new(vec![users.len(), d], data).expect("nonempty rows")
}

/// One seeded run: fresh split, cross-entropy training, epoch chosen by
/// validation BAcc, test BAcc of that epoch.
pub fn attack_run(features: &Tensor, labels: &[usize], config: &AttackConfig, run_seed: u64) -> Result<f64> {
    let mut rng = seed::rng(run_seed);
    let split = user_split(labels, config.max_split_retries, &mut rng)?;
    let inputs = features.shape()[1];
    let mut mlp = Mlp::new(
        inputs,
        config.hidden_dim,
        seed::derive(run_seed, &[seed::label("init")]),
    );
    let mut opt = Adam::new(&mlp.params, config.learning_rate);

    let x_valid = rows(features, &split.validation);
    let y_valid: Vec<usize> = split.validation.iter().map(|&u| labels[u]).collect();
    let mut order = split.train.clone();
    let mut best = (f64::NEG_INFINITY, mlp.params.clone());
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let logits = mlp.logits(&mut g, rows(features, batch))?;
            let y: Vec<usize> = batch.iter().map(|&u| labels[u]).collect();
            let loss = g.cross_entropy(logits, &y)?;
            let grads = g.backward(loss)?;
            opt.step(&mut mlp.params, &grads)?;
        }
        let b = balanced_accuracy(&mlp.predict(x_valid.clone())?, &y_valid)?;
        if b > best.0 {
            best = (b, mlp.params.clone());
        }
    }
    mlp.params = best.1;
    let y_test: Vec<usize> = split.test.iter().map(|&u| labels[u]).collect();
    balanced_accuracy(&mlp.predict(rows(features, &split.test))?, &y_test)
}

pub fn run_attack(ds: &RatingDataset, attributes: &AttributeTable, config: &AttackConfig) -> Result<AttackResult> {
    run_attack_with(ds, attributes, config, Exec::default())
}

/// `config.runs` independent runs with seeds `derive(config.seed, [run])`.
pub fn run_attack_with(
    ds: &RatingDataset,
    attributes: &AttributeTable,
    config: &AttackConfig,
    exec: Exec,
) -> Result<AttackResult> {
    config.validate()?;
    if attributes.len() != ds.num_users() {
        return Err(Error::invalid("attribute table does not match dataset"));
    }
    attributes.require_both_groups()?;
    let features = feature_matrix(ds);
    let labels: Vec<usize> = attributes.groups().iter().map(|g| g.class()).collect();
    let per_run = exec
        .map_range(config.runs, |run| {
            let s = seed::derive(config.seed, &[run as u64]);
            attack_run(&features, &labels, config, s).map(|bacc| AttackRun { run, seed: s, bacc })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(AttackResult::from_runs(per_run))
}
