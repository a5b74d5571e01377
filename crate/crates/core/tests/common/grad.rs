//! Analytic gradients against central finite differences.

use super::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use targeted_dp::dataset::{RatingDataset, RatingRecord, RatingScale};
use targeted_dp::recsys::{RecModel, RecModelConfig};
use targeted_dp::tensor::{adam_step, AdamState, Graph, ParamStore, Tensor, Var};
use targeted_dp::Result;

const H: f64 = 1e-4;
/// Smaller step for the full model, whose many ReLUs put kinks closer together.
const H_MODEL: f64 = 1e-6;

/// Worst per-tensor `||analytic - numeric|| / max(||analytic||, ||numeric||)`.
fn check<F>(store: &ParamStore, h: f64, loss: F) -> f64
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store).unwrap();
    let grads = g.backward(l).unwrap();
    let eval = |s: &ParamStore| {
        let mut g = Graph::new();
        let l = loss(&mut g, s).unwrap();
        g.value(l).item()
    };
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let analytic = grads.dense(id, store.get(id));
        let mut numeric = vec![0.0; analytic.numel()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[k] += h;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[k] -= h;
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn);
        if scale > 1e-10 {
            worst = worst.max(diff / scale);
        } else {
            worst = worst.max(diff);
        }
    }
    worst
}

/// Values bounded away from 0 so no ReLU kink lies within `H`.
fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.gen_range(0.05..1.0);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn random(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces `v` to a scalar through a fixed random weighting.
fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let shape = g.value(v).shape().to_vec();
    let w = g.input(random(&mut rng(seed), &shape))?;
    let p = g.mul(v, w)?;
    g.sum(p)
}

type LossFn = Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>;
type Case = (ParamStore, LossFn);
type OpCase = fn(&mut ChaCha8Rng) -> Case;

fn dims(r: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5))
}

fn unary(r: &mut ChaCha8Rng, op: fn(&mut Graph, Var) -> Result<Var>) -> Case {
    let (n, m, _) = dims(r);
    let mut s = ParamStore::new();
    let x = s.add("x", away_from_zero(r, &[n, m]));
    let w = r.gen();
    (
        s,
        Box::new(move |g, s| {
            let v = g.param(s, x)?;
            let y = op(g, v)?;
            weighted_sum(g, y, w)
        }),
    )
}

fn binary(r: &mut ChaCha8Rng, op: fn(&mut Graph, Var, Var) -> Result<Var>) -> Case {
    let (n, m, _) = dims(r);
    let mut s = ParamStore::new();
    let a = s.add("a", random(r, &[n, m]));
    let b = s.add("b", random(r, &[n, m]));
    let w = r.gen();
    (
        s,
        Box::new(move |g, s| {
            let (va, vb) = (g.param(s, a)?, g.param(s, b)?);
            let y = op(g, va, vb)?;
            weighted_sum(g, y, w)
        }),
    )
}

fn op_cases() -> Vec<(&'static str, OpCase)> {
    vec![
        ("matmul", |r| {
            let (n, k, m) = dims(r);
            let mut s = ParamStore::new();
            let a = s.add("a", random(r, &[n, k]));
            let b = s.add("b", random(r, &[k, m]));
            let w = r.gen();
            (
                s,
                Box::new(move |g, s| {
                    let (va, vb) = (g.param(s, a)?, g.param(s, b)?);
                    let y = g.matmul(va, vb)?;
                    weighted_sum(g, y, w)
                }),
            )
        }),
        ("add", |r| binary(r, |g, a, b| g.add(a, b))),
        ("sub", |r| binary(r, |g, a, b| g.sub(a, b))),
        ("mul", |r| binary(r, |g, a, b| g.mul(a, b))),
        ("add_row", |r| {
            let (n, m, _) = dims(r);
            let mut s = ParamStore::new();
            let a = s.add("a", random(r, &[n, m]));
            let b = s.add("b", random(r, &[m]));
            let w = r.gen();
            (
                s,
                Box::new(move |g, s| {
                    let (va, vb) = (g.param(s, a)?, g.param(s, b)?);
                    let y = g.add(va, vb)?;
                    weighted_sum(g, y, w)
                }),
            )
        }),
        ("scale", |r| unary(r, |g, x| g.scale(x, -1.7))),
        ("relu", |r| unary(r, |g, x| g.relu(x))),
        ("tanh", |r| unary(r, |g, x| g.tanh(x))),
        ("softmax", |r| unary(r, |g, x| g.softmax(x))),
        ("sum_last", |r| unary(r, |g, x| g.sum_last(x))),
        ("reshape", |r| {
            unary(r, |g, x| {
                let n = g.value(x).numel();
                g.reshape(x, &[n])
            })
        }),
        ("sum", |r| unary(r, |g, x| g.sum(x))),
        ("mean", |r| unary(r, |g, x| g.mean(x))),
        ("mse", |r| {
            let (n, _, _) = dims(r);
            let mut s = ParamStore::new();
            let x = s.add("x", random(r, &[n]));
            let target: Vec<f64> = (0..n).map(|_| r.gen_range(1.0..5.0)).collect();
            (
                s,
                Box::new(move |g, s| {
                    let v = g.param(s, x)?;
                    g.mse(v, &target)
                }),
            )
        }),
        ("cross_entropy", |r| {
            let (n, _, _) = dims(r);
            let c = r.gen_range(2..5);
            let mut s = ParamStore::new();
            let x = s.add("x", random(r, &[n, c]));
            let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
            (
                s,
                Box::new(move |g, s| {
                    let v = g.param(s, x)?;
                    g.cross_entropy(v, &labels)
                }),
            )
        }),
        ("gather_rows", |r| {
            let (n, d, b) = dims(r);
            let mut s = ParamStore::new();
            let x = s.add("x", random(r, &[n, d]));
            let idx: Vec<usize> = (0..b + 2).map(|_| r.gen_range(0..n)).collect();
            let w = r.gen();
            (
                s,
                Box::new(move |g, s| {
                    let v = g.param(s, x)?;
                    let y = g.gather_rows(v, &idx)?;
                    weighted_sum(g, y, w)
                }),
            )
        }),
        ("slice_cols", |r| {
            let (n, _, _) = dims(r);
            let m = r.gen_range(2..6);
            let start = r.gen_range(0..m - 1);
            let end = r.gen_range(start + 1..=m);
            let mut s = ParamStore::new();
            let x = s.add("x", random(r, &[n, m]));
            let w = r.gen();
            (
                s,
                Box::new(move |g, s| {
                    let v = g.param(s, x)?;
                    let y = g.slice_cols(v, start, end)?;
                    weighted_sum(g, y, w)
                }),
            )
        }),
        ("batched_matvec", |r| {
            let (b, m, n) = dims(r);
            let mut s = ParamStore::new();
            let mats = s.add("mats", random(r, &[b, m * n]));
            let vecs = s.add("vecs", random(r, &[b, n]));
            let w = r.gen();
            (
                s,
                Box::new(move |g, s| {
                    let (vm, vv) = (g.param(s, mats)?, g.param(s, vecs)?);
                    let y = g.batched_matvec(vm, vv, m, n)?;
                    weighted_sum(g, y, w)
                }),
            )
        }),
    ]
}

pub fn every_op_matches_finite_differences() {
    for (name, case) in op_cases() {
        for seed in 0..10u64 {
            let mut r = rng(seed * 131 + name.len() as u64);
            let (store, loss) = case(&mut r);
            let err = check(&store, H, loss);
            assert!(err < 1e-4, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

pub fn two_layer_mlp_matches_finite_differences() {
    for seed in 0..10u64 {
        let mut r = rng(900 + seed);
        let (n, d, h) = (r.gen_range(2..8), r.gen_range(2..6), r.gen_range(2..6));
        let mut s = ParamStore::new();
        let w1 = s.add("w1", random(&mut r, &[d, h]));
        let b1 = s.add("b1", random(&mut r, &[h]));
        let w2 = s.add("w2", random(&mut r, &[h, 2]));
        let b2 = s.add("b2", random(&mut r, &[2]));
        let x = random(&mut r, &[n, d]);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let err = check(&s, H, move |g, s| {
            let xi = g.input(x.clone())?;
            let p = |g: &mut Graph, id| g.param(s, id);
            let (w1, b1, w2, b2) = (p(g, w1)?, p(g, b1)?, p(g, w2)?, p(g, b2)?);
            let z = g.matmul(xi, w1)?;
            let z = g.add(z, b1)?;
            let z = g.relu(z)?;
            let o = g.matmul(z, w2)?;
            let o = g.add(o, b2)?;
            g.cross_entropy(o, &labels)
        });
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}

fn tiny_model(seed: u64, meta: bool) -> (RecModel, Vec<RatingRecord>) {
    let cfg = RecModelConfig {
        user_embedding_dim: 3,
        collaborative_dim: 4,
        item_feature_dim: 3,
        hypernet_hidden_dim: 4,
        prediction_hidden_dim: 3,
        seed,
        meta_enabled: meta,
        ..RecModelConfig::default()
    };
    let m = RecModel::init(&cfg, 3, 4, RatingScale::MOVIELENS).unwrap();
    let mut r = rng(seed + 77);
    let mut recs = Vec::new();
    for u in 0..3u32 {
        for i in 0..4u32 {
            if r.gen_bool(0.7) || (u + i) % 3 == 0 {
                recs.push(RatingRecord::new(u, i, r.gen_range(1..=5)));
            }
        }
    }
    (m, recs)
}

pub fn model_loss_matches_finite_differences() {
    for seed in 0..10u64 {
        let (m, recs) = tiny_model(seed, true);
        let users: Vec<usize> = recs.iter().map(|r| r.user as usize).collect();
        let items: Vec<usize> = recs.iter().map(|r| r.item as usize).collect();
        let target: Vec<f64> = recs.iter().map(|r| f64::from(r.rating)).collect();
        let template = m.clone();
        let err = check(&m.params, H_MODEL, move |g, s| {
            let mut mm = template.clone();
            mm.params = s.clone();
            let p = mm.forward_graph(g, &users, &items)?;
            g.mse(p, &target)
        });
        assert!(err < 1e-3, "seed {seed}: {err:e}");
        // The library's own batch gradients agree with the generic path.
        let (_, grads) = m.loss_and_gradients(&recs).unwrap();
        assert!(!grads.is_zero(m.ids.memory));
    }
}

pub fn frozen_meta_path_has_exactly_zero_gradients() {
    for seed in 0..10u64 {
        let (m, recs) = tiny_model(seed, false);
        let (_, grads) = m.loss_and_gradients(&recs).unwrap();
        for id in m.ids.hypernet() {
            assert!(grads.is_zero(id));
        }
        assert!(grads.is_zero(m.ids.memory));
        assert!(grads.is_zero(m.ids.user_embeddings));
        assert!(!grads.is_zero(m.ids.item_features));
    }
}

pub fn adam_reaches_small_gradient_on_quadratic() {
    // f(w) = 0.5 w^T A w - c^T w with A positive definite.
    let a = [[3.0, 1.0], [1.0, 2.0]];
    let c = [1.0, -1.0];
    let grad = |w: &[f64]| {
        [
            a[0][0] * w[0] + a[0][1] * w[1] - c[0],
            a[1][0] * w[0] + a[1][1] * w[1] - c[1],
        ]
    };
    let mut r = rng(2024);
    let mut params = vec![Tensor::vector(vec![r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)])];
    let mut state = AdamState::new(&params);
    for _ in 0..200 {
        let g = grad(params[0].data());
        adam_step(
            &mut params,
            &[Tensor::vector(g.to_vec())],
            &mut state,
            0.1,
            0.9,
            0.999,
            1e-8,
        )
        .unwrap();
    }
    let g = grad(params[0].data());
    let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
    assert!(norm < 1e-3, "|grad| = {norm:e}");
}

pub fn training_overfits_single_rating() {
    let ds = RatingDataset::from_records(vec![RatingRecord::new(0, 0, 3)], 1, 1, RatingScale::MOVIELENS).unwrap();
    let cfg = RecModelConfig {
        user_embedding_dim: 4,
        collaborative_dim: 4,
        item_feature_dim: 3,
        hypernet_hidden_dim: 4,
        prediction_hidden_dim: 4,
        learning_rate: 0.01,
        batch_size: 1,
        epochs: 300,
        seed: 1,
        meta_enabled: true,
    };
    let state = targeted_dp::recsys::train(&ds, &ds, &cfg).unwrap();
    let mae = targeted_dp::recsys::evaluate_mae(&state.model, &ds).unwrap();
    assert!(mae < 0.1, "train MAE {mae}");
}
