#![allow(dead_code)]

pub mod grad;
pub mod oracle;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use targeted_dp::dataset::{AttributeTable, RatingDataset, RatingRecord, RatingScale};
use targeted_dp::seed;

pub fn rng(s: u64) -> ChaCha8Rng {
    seed::rng(s)
}

/// Random sparse dataset with `density` fill and ratings on 1..=5.
pub fn random_dataset<R: Rng>(rng: &mut R, users: usize, items: usize, density: f64) -> RatingDataset {
    let mut records = Vec::new();
    for u in 0..users {
        for i in 0..items {
            if rng.gen_bool(density) {
                records.push(RatingRecord::new(u as u32, i as u32, rng.gen_range(1..=5)));
            }
        }
    }
    RatingDataset::from_records(records, users, items, RatingScale::MOVIELENS).unwrap()
}

/// Random group flags with both groups present (needs `users >= 2`).
pub fn random_groups<R: Rng>(rng: &mut R, users: usize) -> AttributeTable {
    let mut flags: Vec<bool> = (0..users).map(|_| rng.gen_bool(0.5)).collect();
    flags[0] = true;
    flags[1] = false;
    AttributeTable::from_flags(&flags)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
