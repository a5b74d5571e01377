//! Brute-force reference implementations checked against the library on
//! many small random instances.

use std::collections::{BTreeSet, HashSet};

use super::{random_dataset, random_groups, rng};
use rand::Rng;
use targeted_dp::attack::{balanced_accuracy, mean_std};
use targeted_dp::dataset::{k_core_prune, Group, RatingScale};
use targeted_dp::harness::{dominates, pareto_frontier, summarize, CellStrategy, ExperimentRecord};
use targeted_dp::privacy::Epsilon;
use targeted_dp::recsys::{ModelKind, RecModel, RecModelConfig};
use targeted_dp::stereotype::{build_index, select_stereotypical, ScoringSubset};
use targeted_dp::tensor::{Graph, Tensor};

const INSTANCES: u64 = 120;

pub fn igi_matches_direct_count() {
    for case in 0..INSTANCES {
        let mut r = rng(1000 + case);
        let users = r.gen_range(2..=50);
        let items = r.gen_range(1..=50);
        let density = r.gen_range(0.05..0.6);
        let ds = random_dataset(&mut r, users, items, density);
        let attrs = random_groups(&mut r, users);
        if ds.is_empty() {
            continue;
        }
        let idx = build_index(&ds, &attrs, ScoringSubset::Full).unwrap();
        for i in 0..items {
            for (g, got) in [(Group::A, idx.igi_a[i]), (Group::ABar, idx.igi_abar[i])] {
                let members: Vec<usize> = (0..users).filter(|&u| attrs.group(u) == g).collect();
                let raters = members
                    .iter()
                    .filter(|&&u| ds.profile(u).iter().any(|rec| rec.item as usize == i))
                    .count();
                assert_eq!(got, raters as f64 / members.len() as f64, "case {case} item {i}");
            }
            let (a, b) = (idx.igi_a[i], idx.igi_abar[i]);
            let expect = if a.max(b) == 0.0 { 0.0 } else { (a - b) / a.max(b) };
            assert_eq!(idx.item_score(i, Group::A).unwrap(), expect);
            assert_eq!(idx.item_score(i, Group::ABar).unwrap(), -expect);
        }
    }
}

pub fn top_k_matches_full_sort() {
    for case in 0..INSTANCES {
        let mut r = rng(2000 + case);
        let users = r.gen_range(2..=50);
        let items = r.gen_range(1..=50);
        let density = r.gen_range(0.05..0.6);
        let ds = random_dataset(&mut r, users, items, density);
        let attrs = random_groups(&mut r, users);
        if ds.is_empty() {
            continue;
        }
        let idx = build_index(&ds, &attrs, ScoringSubset::Full).unwrap();
        let beta = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0][r.gen_range(0..7)];
        for u in 0..users {
            let got = select_stereotypical(&idx, &ds, &attrs, u, beta).unwrap();
            // Oracle: every (score, item) pair, sorted with an explicit
            // comparison, first k taken.
            let mut pairs: Vec<(f64, u32)> = ds
                .profile(u)
                .iter()
                .map(|rec| (idx.item_score(rec.item as usize, attrs.group(u)).unwrap(), rec.item))
                .collect();
            pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
            let n = pairs.len();
            let k = (0..=n).find(|&k| k as f64 >= (1.0 - beta) * n as f64 - 1e-9).unwrap();
            let expect: Vec<u32> = pairs[..k].iter().map(|p| p.1).collect();
            assert_eq!(got, expect, "case {case} user {u} beta {beta}");
        }
    }
}

/// Removes one violating user or item at a time, recounting from scratch.
fn naive_core(pairs: &BTreeSet<(u32, u32)>, k: usize) -> BTreeSet<(u32, u32)> {
    let mut alive = pairs.clone();
    loop {
        let violating_user = alive
            .iter()
            .map(|p| p.0)
            .find(|&u| alive.iter().filter(|p| p.0 == u).count() < k);
        if let Some(u) = violating_user {
            alive.retain(|p| p.0 != u);
            continue;
        }
        let violating_item = alive
            .iter()
            .map(|p| p.1)
            .find(|&i| alive.iter().filter(|p| p.1 == i).count() < k);
        match violating_item {
            Some(i) => alive.retain(|p| p.1 != i),
            None => return alive,
        }
    }
}

pub fn k_core_matches_one_at_a_time_removal() {
    for case in 0..INSTANCES {
        let mut r = rng(3000 + case);
        let users = r.gen_range(1..=50);
        let items = r.gen_range(1..=50);
        let density = r.gen_range(0.02..0.4);
        let ds = random_dataset(&mut r, users, items, density);
        let k = r.gen_range(1..=6);
        let pairs: BTreeSet<(u32, u32)> = ds.records().iter().map(|x| (x.user, x.item)).collect();
        let expect = naive_core(&pairs, k);
        match k_core_prune(&ds, k) {
            Err(_) => assert!(expect.is_empty(), "case {case}"),
            Ok(core) => {
                let ids = core.id_maps();
                let got: BTreeSet<(u32, u32)> = core
                    .records()
                    .iter()
                    .map(|x| {
                        (
                            ids.users[x.user as usize].parse().unwrap(),
                            ids.items[x.item as usize].parse().unwrap(),
                        )
                    })
                    .collect();
                assert_eq!(got, expect, "case {case} k {k}");
                let users_left: HashSet<u32> = expect.iter().map(|p| p.0).collect();
                assert_eq!(core.num_users(), users_left.len());
            }
        }
    }
}

pub fn balanced_accuracy_matches_confusion_matrix() {
    for case in 0..INSTANCES {
        let mut r = rng(4000 + case);
        let n = r.gen_range(2..=200);
        let mut labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let preds: Vec<usize> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let mut cm = [[0usize; 2]; 2];
        for (&y, &p) in labels.iter().zip(&preds) {
            cm[y][p] += 1;
        }
        let tpr = cm[1][1] as f64 / (cm[1][0] + cm[1][1]) as f64;
        let tnr = cm[0][0] as f64 / (cm[0][0] + cm[0][1]) as f64;
        let got = balanced_accuracy(&preds, &labels).unwrap();
        assert!((got - (tpr + tnr) / 2.0).abs() < 1e-12, "case {case}");
    }
}

pub fn pareto_matches_pairwise_domination() {
    for case in 0..INSTANCES {
        let mut r = rng(5000 + case);
        let n = r.gen_range(1..=100);
        // Coarse grid values force ties and duplicates.
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (f64::from(r.gen_range(0..12)) / 4.0, f64::from(r.gen_range(0..12)) / 4.0))
            .collect();
        let mut expect: Vec<(f64, f64)> = pts
            .iter()
            .filter(|p| !pts.iter().any(|q| dominates(q, *p)))
            .copied()
            .collect();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got = pareto_frontier(&pts);
        assert_eq!(got, expect, "case {case}");
    }
}

fn record(
    model: ModelKind,
    strategy: CellStrategy,
    eps: f64,
    beta: f64,
    fold: usize,
    vals: [f64; 4],
) -> ExperimentRecord {
    ExperimentRecord {
        dataset: "d".into(),
        model,
        strategy,
        epsilon: if eps.is_infinite() {
            Epsilon::INFINITY
        } else {
            Epsilon::new(eps).unwrap()
        },
        beta,
        fold,
        mae: vals[0],
        delta_mae_pct: vals[1],
        bacc: vals[2],
        delta_bacc_pct: vals[3],
        seed: 0,
        error: String::new(),
    }
}

type Column = fn(&ExperimentRecord) -> f64;

pub fn aggregation_matches_recomputation() {
    for case in 0..INSTANCES {
        let mut r = rng(6000 + case);
        let mut records = Vec::new();
        let folds = r.gen_range(1..=5);
        for fold in 0..folds {
            for model in [ModelKind::MetaMF, ModelKind::NoMetaMF] {
                for (s, e, b) in [
                    (CellStrategy::None, f64::INFINITY, 1.0),
                    (CellStrategy::Targeted, 0.1, 0.3),
                    (CellStrategy::Random, 0.1, 0.3),
                ] {
                    let vals = [r.gen(), r.gen_range(-50.0..50.0), r.gen(), r.gen_range(-50.0..50.0)];
                    records.push(record(model, s, e, b, fold, vals));
                }
            }
        }
        records.reverse();
        let rows = summarize(&records);
        assert_eq!(rows.len(), 6);
        for row in &rows {
            let members: Vec<&ExperimentRecord> = records
                .iter()
                .filter(|x| x.model == row.model && x.strategy == row.strategy && x.beta == row.beta)
                .collect();
            assert_eq!(row.n, members.len());
            let cols: [(Column, f64, f64); 4] = [
                (|x| x.mae, row.mae.mean, row.mae.std),
                (|x| x.delta_mae_pct, row.delta_mae_pct.mean, row.delta_mae_pct.std),
                (|x| x.bacc, row.bacc.mean, row.bacc.std),
                (|x| x.delta_bacc_pct, row.delta_bacc_pct.mean, row.delta_bacc_pct.std),
            ];
            for (f, mean, std) in cols {
                // Spreadsheet-style: AVERAGE and STDEV.S.
                let v: Vec<f64> = members.iter().map(|x| f(x)).collect();
                let m = v.iter().sum::<f64>() / v.len() as f64;
                let s = if v.len() > 1 {
                    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
                } else {
                    0.0
                };
                assert!((mean - m).abs() < 1e-9, "case {case}");
                assert!((std - s).abs() < 1e-9, "case {case}");
            }
        }
    }
    assert_eq!(mean_std(&[2.0, 2.0, 2.0]), (2.0, 0.0));
}

pub fn matmul_matches_triple_loop() {
    let mut r = rng(7);
    let a: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut g = Graph::new();
    let va = g.input(Tensor::matrix(2, 3, a.clone()).unwrap()).unwrap();
    let vb = g.input(Tensor::matrix(3, 2, b.clone()).unwrap()).unwrap();
    let vc = g.matmul(va, vb).unwrap();
    let c = g.value(vc);
    assert_eq!(c.shape(), [2, 2]);
    for i in 0..2 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..3 {
                s += a[i * 3 + k] * b[k * 2 + j];
            }
            assert!((c.data()[i * 2 + j] - s).abs() < 1e-12);
        }
    }
}

/// Straight-line forward pass written from the model definition.
fn reference_forward(m: &RecModel, user: usize, item: usize) -> f64 {
    let c = &m.config;
    let (du, dc, r, hh, h) = (
        c.user_embedding_dim,
        c.collaborative_dim,
        c.item_feature_dim,
        c.hypernet_hidden_dim,
        c.prediction_hidden_dim,
    );
    let p = |name: &str| m.params.get(m.params.find(name).unwrap()).data().to_vec();
    let emb = p("user_embeddings");
    let mem = p("memory");
    let e = &emb[user * du..(user + 1) * du];
    let cu: Vec<f64> = (0..dc)
        .map(|j| (0..du).map(|k| e[k] * mem[k * dc + j]).sum::<f64>().tanh())
        .collect();
    let mlp = |w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: Vec<f64>| -> Vec<f64> {
        let out = b2.len();
        let hid: Vec<f64> = (0..hh)
            .map(|j| ((0..dc).map(|k| cu[k] * w1[k * hh + j]).sum::<f64>() + b1[j]).max(0.0))
            .collect();
        (0..out)
            .map(|o| (0..hh).map(|j| hid[j] * w2[j * out + o]).sum::<f64>() + b2[o])
            .collect()
    };
    let theta = mlp(p("head_a.w1"), p("head_a.b1"), p("head_a.w2"), p("head_a.b2"));
    let gmat = mlp(p("head_b.w1"), p("head_b.b1"), p("head_b.w2"), p("head_b.b2"));
    let feats = p("item_features");
    let f = &feats[item * r..(item + 1) * r];
    let q: Vec<f64> = (0..r).map(|a| (0..r).map(|b| gmat[a * r + b] * f[b]).sum()).collect();
    let w1 = &theta[..h * r];
    let b1 = &theta[h * r..h * r + h];
    let w2 = &theta[h * r + h..h * r + 2 * h];
    let b2 = theta[h * r + 2 * h];
    let z: Vec<f64> = (0..h)
        .map(|j| ((0..r).map(|k| w1[j * r + k] * q[k]).sum::<f64>() + b1[j]).max(0.0))
        .collect();
    (0..h).map(|j| w2[j] * z[j]).sum::<f64>() + b2
}

pub fn model_forward_matches_reference() {
    for s in 0..10u64 {
        let cfg = RecModelConfig {
            user_embedding_dim: 4,
            collaborative_dim: 4,
            item_feature_dim: 3,
            hypernet_hidden_dim: 4,
            prediction_hidden_dim: 4,
            seed: s,
            ..RecModelConfig::default()
        };
        let m = RecModel::init(&cfg, 5, 7, RatingScale::MOVIELENS).unwrap();
        let users: Vec<usize> = (0..35).map(|k| k % 5).collect();
        let items: Vec<usize> = (0..35).map(|k| k / 5).collect();
        let got = m.predict_raw(&users, &items).unwrap();
        for ((&u, &i), g) in users.iter().zip(&items).zip(got) {
            let want = reference_forward(&m, u, i);
            assert!((g - want).abs() < 1e-10, "seed {s} ({u},{i}): {g} vs {want}");
        }
    }
}

pub fn forward_is_equivariant_under_user_relabeling() {
    let cfg = RecModelConfig {
        user_embedding_dim: 4,
        collaborative_dim: 4,
        item_feature_dim: 3,
        hypernet_hidden_dim: 4,
        prediction_hidden_dim: 4,
        seed: 3,
        ..RecModelConfig::default()
    };
    let m = RecModel::init(&cfg, 4, 3, RatingScale::MOVIELENS).unwrap();
    let perm = [2usize, 0, 3, 1];
    let mut pm = m.clone();
    let du = cfg.user_embedding_dim;
    let src = m.params.get(m.ids.user_embeddings).data().to_vec();
    let dst = pm.params.get_mut(pm.ids.user_embeddings).data_mut();
    for (old, &new) in perm.iter().enumerate() {
        dst[new * du..(new + 1) * du].copy_from_slice(&src[old * du..(old + 1) * du]);
    }
    for (old, &new) in perm.iter().enumerate() {
        for i in 0..3 {
            assert_eq!(
                m.predict_raw(&[old], &[i]).unwrap(),
                pm.predict_raw(&[new], &[i]).unwrap()
            );
        }
    }
}
